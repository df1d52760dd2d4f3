# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

"""
Candidate gating, the classical association scores and 1-to-1 assignment.

All scores are minimized: IoU is reported as 1 - IoU.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from vrutrack import protocol
from vrutrack.core import polygon_iou
from vrutrack.imm import Observation, whitened_distance


@dataclass(eq=False)
class CandidatePair:
    """
    A gated (track, detection) pairing.

    `score`
      lower is better for every scorer, classical or learned

    `probability`, `output`, `memory`
      filled in by the learned model: association probability, the raw
      `ModelOutput` row and the recurrent memory this pair would commit
    """

    track: object
    detection: object
    gate_distance: float
    score: float = 0.0
    probability: float = None
    output: object = None
    memory: object = None
    features: np.ndarray = None

    @property
    def track_id(self):
        return self.track.id

    @property
    def detection_id(self):
        return self.detection.id

    @property
    def sort_key(self):
        return (self.score, self.track_id, self.detection_id)


@dataclass
class Assignment:
    """Matched pairs in commit order, plus whatever was left over."""

    matches: list = field(default_factory=list)
    unmatched_tracks: list = field(default_factory=list)
    unmatched_detections: list = field(default_factory=list)

    @property
    def total_score(self):
        return sum(pair.score for pair in self.matches)

    def matched_ids(self):
        return {(pair.track_id, pair.detection_id) for pair in self.matches}


def gate(tracks, detections, r=protocol.gating_radius):
    """
    Returns every (track, detection) pair whose predicted track position lies
    strictly within `r` meters of the detection centroid. Tracks must already
    be predicted to the detection timestamp.
    """
    if not tracks or not detections:
        return []
    track_xy = np.array([(t.estimate.x, t.estimate.y) for t in tracks])
    det_xy = np.array([(d.box.cx, d.box.cy) for d in detections])
    distances = np.linalg.norm(track_xy[:, None, :] - det_xy[None, :, :], axis=-1)
    rows, cols = np.nonzero(distances < r)
    return [
        CandidatePair(tracks[i], detections[j], float(distances[i, j]))
        for i, j in zip(rows.tolist(), cols.tolist())
    ]


def predicted_box(track):
    return track.last_box.moved_to(track.estimate.x, track.estimate.y)


def score_iou(pair):
    return 1.0 - polygon_iou(predicted_box(pair.track), pair.detection.box)


def score_l2(pair):
    est = pair.track.estimate
    return math.hypot(est.x - pair.detection.box.cx, est.y - pair.detection.box.cy)


def score_mahalanobis(pair, measurement_sigma=None):
    """
    Innovation distance of the detection against the track's fused IMM
    prediction, with the detection sensor's measurement noise.
    """
    sigma = measurement_sigma
    if sigma is None:
        sigma = protocol.measurement_sigma[pair.detection.sensor]
    obs = Observation.position(pair.detection.box.cx, pair.detection.box.cy, sigma)
    mean, cov = pair.track.moments
    return float(whitened_distance(mean, cov, obs.z, obs.R))


SCORERS = {
    protocol.mode_iou: score_iou,
    protocol.mode_l2: score_l2,
    protocol.mode_mahalanobis: score_mahalanobis,
}


def score_pairs(pairs, mode, measurement_sigma=None):
    """Scores `pairs` in place with a classical scorer; drops zero-overlap IoU pairs."""
    if mode == protocol.mode_mahalanobis and pairs:
        sigma = measurement_sigma or protocol.measurement_sigma
        means = np.stack([p.track.moments[0] for p in pairs])
        covs = np.stack([p.track.moments[1] for p in pairs])
        obs = Observation.position(
            [p.detection.box.cx for p in pairs],
            [p.detection.box.cy for p in pairs],
            [sigma[p.detection.sensor] for p in pairs],
        )
        for pair, score in zip(pairs, whitened_distance(means, covs, obs.z, obs.R).tolist()):
            pair.score = score
        return pairs
    scorer = SCORERS[mode]
    for pair in pairs:
        pair.score = scorer(pair)
    if mode == protocol.mode_iou:
        pairs = [pair for pair in pairs if pair.score < 1.0]
    return pairs


def _leftovers(pairs, matched_tracks, matched_detections, tracks, detections):
    if not tracks:
        tracks = list({p.track_id: p.track for p in pairs}.values())
    if not detections:
        detections = list({p.detection_id: p.detection for p in pairs}.values())
    return (
        [t for t in tracks if t.id not in matched_tracks],
        [d for d in detections if d.id not in matched_detections],
    )


def greedy_assign(pairs, tracks=(), detections=()):
    """
    Greedy best-first matching: repeatedly commits the lowest-score pair whose
    track and detection are both still free. Ties go to the lower
    (track id, detection id).

    `tracks`/`detections` optionally list every participant, so those without
    any candidate pair are reported as unmatched too.
    """
    used_tracks, used_detections = set(), set()
    matches = []
    for pair in sorted(pairs, key=lambda p: p.sort_key):
        if pair.track_id in used_tracks or pair.detection_id in used_detections:
            continue
        used_tracks.add(pair.track_id)
        used_detections.add(pair.detection_id)
        matches.append(pair)
    unmatched_tracks, unmatched_detections = _leftovers(
        pairs, used_tracks, used_detections, tracks, detections
    )
    return Assignment(matches, unmatched_tracks, unmatched_detections)


def hungarian_assign(pairs, tracks=(), detections=()):
    """
    Minimum total score matching over the bipartite graph induced by
    `pairs`; absent pairs are unmatchable. Among matchings it first maximizes
    the number of matched pairs, then minimizes their total score.
    """
    if not pairs:
        unmatched_tracks, unmatched_detections = _leftovers(pairs, set(), set(), tracks, detections)
        return Assignment([], unmatched_tracks, unmatched_detections)

    track_ids = sorted({p.track_id for p in pairs})
    det_ids = sorted({p.detection_id for p in pairs})
    row = {tid: i for i, tid in enumerate(track_ids)}
    col = {did: j for j, did in enumerate(det_ids)}
    scores = np.array([p.score for p in pairs], dtype=float)
    # Any single unmatchable entry must outweigh the sum of all real scores.
    big = (np.abs(scores).sum() + 1.0) * (len(pairs) + 1)
    cost = np.full((len(track_ids), len(det_ids)), big)
    lookup = {}
    for pair in pairs:
        i, j = row[pair.track_id], col[pair.detection_id]
        if (i, j) not in lookup or pair.score < cost[i, j]:
            cost[i, j] = pair.score
            lookup[(i, j)] = pair

    rows, cols = linear_sum_assignment(cost)
    matches = [lookup[(i, j)] for i, j in zip(rows, cols) if (i, j) in lookup]
    matches.sort(key=lambda p: p.sort_key)
    unmatched_tracks, unmatched_detections = _leftovers(
        pairs,
        {p.track_id for p in matches},
        {p.detection_id for p in matches},
        tracks,
        detections,
    )
    return Assignment(matches, unmatched_tracks, unmatched_detections)


ASSIGNERS = {"greedy": greedy_assign, "hungarian": hungarian_assign}
