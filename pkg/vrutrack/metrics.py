# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

"""
CLEAR-MOT metrics by centroid distance, plus velocity metrics:

MOTVE
  mean velocity error (m/s) over true-positive matches

MOTVO
  fraction of true-positive matches whose velocity error exceeds a
  per-class threshold (strictly)

Both velocity metrics are reported per class and are absent (None) for a
class without matches.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from vrutrack import protocol


class EmptyGroundTruthError(ValueError):
    pass


@dataclass(frozen=True)
class Correspondence:
    label: object
    record: object
    distance: float

    @property
    def velocity_error(self):
        return math.hypot(self.label.vx - self.record.state.vx, self.label.vy - self.record.state.vy)

    @property
    def category(self):
        return self.label.category


@dataclass
class FrameMatch:
    """
    Matching result at one timestamp. `switches` and `fragmentations` count
    the identity switches and resumed trajectories that happen at this frame.
    """

    time: float
    matches: list = field(default_factory=list)
    false_positives: list = field(default_factory=list)
    misses: list = field(default_factory=list)
    switches: int = 0
    fragmentations: int = 0
    sequence: int = 0

    @property
    def n_labels(self):
        return len(self.matches) + len(self.misses)


def _distances(labels, records):
    a = np.array([(l.box.cx, l.box.cy) for l in labels], dtype=float).reshape(-1, 2)
    b = np.array([(r.state.x, r.state.y) for r in records], dtype=float).reshape(-1, 2)
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def _min_cost_matching(distances, radius):
    """Pairs (i, j) with distance < radius, maximum count first, then minimum total distance."""
    if distances.size == 0:
        return []
    valid = distances < radius
    if not valid.any():
        return []
    big = (distances[valid].sum() + 1.0) * (valid.sum() + 1)
    cost = np.where(valid, distances, big)
    rows, cols = linear_sum_assignment(cost)
    return [(i, j) for i, j in zip(rows.tolist(), cols.tolist()) if valid[i, j]]


def match_frames(frame_logs, label_frames, match_radius=protocol.match_radius, sequence=0, confirmed_only=True):
    """
    Frame-by-frame correspondence between track records and labels.

    A label keeps the track it was matched to in the previous frame while
    they stay within `match_radius`; the remaining labels and tracks are
    matched by minimum total centroid distance. Track logs are looked up by
    label frame time; labels without a log at their time are all missed.
    """
    logs = {log.time: log for log in frame_logs}
    previous = {}  # label id -> track id matched in the previous frame
    last_track = {}  # label id -> last track it was ever matched to
    interrupted = set()
    result = []

    for label_frame in label_frames:
        log = logs.get(label_frame.time)
        records = []
        if log is not None:
            records = log.confirmed() if confirmed_only else list(log.records)
        labels = list(label_frame.labels)
        distances = _distances(labels, records)
        track_pos = {r.track_id: j for j, r in enumerate(records)}

        pairs = []
        free_labels, free_records = set(range(len(labels))), set(range(len(records)))
        for i, label in enumerate(labels):
            j = track_pos.get(previous.get(label.track_id))
            if j is not None and j in free_records and distances[i, j] < match_radius:
                pairs.append((i, j))
                free_labels.discard(i)
                free_records.discard(j)
        rest_labels, rest_records = sorted(free_labels), sorted(free_records)
        sub = distances[np.ix_(rest_labels, rest_records)] if rest_labels and rest_records else np.zeros((0, 0))
        pairs.extend((rest_labels[i], rest_records[j]) for i, j in _min_cost_matching(sub, match_radius))

        frame = FrameMatch(label_frame.time, sequence=sequence)
        matched_labels, matched_records = set(), set()
        current = {}
        for i, j in sorted(pairs):
            label, record = labels[i], records[j]
            frame.matches.append(Correspondence(label, record, float(distances[i, j])))
            matched_labels.add(i)
            matched_records.add(j)
            current[label.track_id] = record.track_id
            before = last_track.get(label.track_id)
            if before is not None and before != record.track_id:
                frame.switches += 1
            if label.track_id in interrupted:
                frame.fragmentations += 1
                interrupted.discard(label.track_id)
            last_track[label.track_id] = record.track_id
        for i, label in enumerate(labels):
            if i not in matched_labels:
                frame.misses.append(label)
                if label.track_id in last_track:
                    interrupted.add(label.track_id)
        frame.false_positives = [r for j, r in enumerate(records) if j not in matched_records]
        previous = current
        result.append(frame)
    return result


def _correspondences(frames, category=None):
    return [
        c
        for frame in frames
        for c in frame.matches
        if category is None or c.category == category
    ]


def motve(frames, category=None):
    """Mean velocity error over matches (m/s), or None without matches."""
    matches = _correspondences(frames, category)
    if not matches:
        return None
    return sum(c.velocity_error for c in matches) / len(matches)


def motvo(frames, category=None, thresholds=None):
    """Fraction of matches with velocity error above the class threshold, or None."""
    thresholds = thresholds or protocol.velocity_outlier_threshold
    matches = _correspondences(frames, category)
    if not matches:
        return None
    outliers = sum(1 for c in matches if c.velocity_error > thresholds[c.category])
    return outliers / len(matches)


@dataclass
class MetricReport:
    mota: float
    motp: float
    mt: float
    ml: float
    idsw: int
    frag: int
    fp: int
    fn: int
    gt: int
    matches: int
    motve: dict = field(default_factory=dict)
    motvo: dict = field(default_factory=dict)

    columns = (
        "MOTA",
        "MOTVO_ped",
        "MOTVO_bike",
        "MOTVE_ped",
        "MOTVE_bike",
        "FP",
        "FN",
        "IDSW",
        "MOTP",
        "MT",
        "ML",
        "Frag",
    )

    def row(self):
        """Values in `columns` order."""
        return (
            self.mota,
            self.motvo.get(protocol.pedestrian),
            self.motvo.get(protocol.bicyclist),
            self.motve.get(protocol.pedestrian),
            self.motve.get(protocol.bicyclist),
            self.fp,
            self.fn,
            self.idsw,
            self.motp,
            self.mt,
            self.ml,
            self.frag,
        )

    def to_dict(self):
        return asdict(self)

    def dumps(self, name=None):
        header = ([""] if name is not None else []) + list(self.columns)
        values = ([name] if name is not None else []) + [_format(v) for v in self.row()]
        widths = [max(len(h), len(v)) for h, v in zip(header, values)]
        return "\n".join(
            "  ".join(cell.rjust(width) for cell, width in zip(line, widths))
            for line in (header, values)
        )

    def dump_json(self, path):
        with open(path, "w") as fileobj:
            json.dump(self.to_dict(), fileobj, indent=2, sort_keys=True)
            fileobj.write("\n")

    def __str__(self):
        return self.dumps()


def _format(value):
    if value is None:
        return "-"
    if isinstance(value, float):
        if math.isnan(value):
            return "-"
        return f"{value:.4f}"
    return str(value)


def clear_mot(frames):
    """
    Returns (MOTA, MOTP, MT, ML, IDSW, Frag) over `frames` (which may mix
    sequences). MT/ML are the fractions of label trajectories matched in more
    than 80% / fewer than 20% of the frames they appear in.
    """
    gt = sum(f.n_labels for f in frames)
    if gt == 0:
        raise EmptyGroundTruthError("no ground-truth labels to evaluate against")
    fp = sum(len(f.false_positives) for f in frames)
    fn = sum(len(f.misses) for f in frames)
    idsw = sum(f.switches for f in frames)
    frag = sum(f.fragmentations for f in frames)
    matches = _correspondences(frames)
    motp = sum(c.distance for c in matches) / len(matches) if matches else math.nan

    present, covered = {}, {}
    for f in frames:
        for c in f.matches:
            key = (f.sequence, c.label.track_id)
            present[key] = present.get(key, 0) + 1
            covered[key] = covered.get(key, 0) + 1
        for label in f.misses:
            key = (f.sequence, label.track_id)
            present[key] = present.get(key, 0) + 1
    ratios = [covered.get(key, 0) / n for key, n in present.items()]
    mt = sum(1 for r in ratios if r > 0.8) / len(ratios)
    ml = sum(1 for r in ratios if r < 0.2) / len(ratios)
    mota = 1.0 - (fp + fn + idsw) / gt
    return mota, motp, mt, ml, idsw, frag


def report(frames, thresholds=None):
    mota, motp, mt, ml, idsw, frag = clear_mot(frames)
    velocity_error, outliers = {}, {}
    for category in protocol.classes:
        error = motve(frames, category)
        if error is not None:
            velocity_error[category] = error
            outliers[category] = motvo(frames, category, thresholds)
    return MetricReport(
        mota=mota,
        motp=motp,
        mt=mt,
        ml=ml,
        idsw=idsw,
        frag=frag,
        fp=sum(len(f.false_positives) for f in frames),
        fn=sum(len(f.misses) for f in frames),
        gt=sum(f.n_labels for f in frames),
        matches=sum(len(f.matches) for f in frames),
        motve=velocity_error,
        motvo=outliers,
    )


def evaluate(frame_logs, label_frames, match_radius=protocol.match_radius, thresholds=None):
    """Metric report for one sequence."""
    return report(match_frames(frame_logs, label_frames, match_radius), thresholds)


def evaluate_sequences(sequences, match_radius=protocol.match_radius, thresholds=None):
    """Metric report pooled over [(frame_logs, label_frames), ...]."""
    frames = []
    for index, (frame_logs, label_frames) in enumerate(sequences):
        frames.extend(match_frames(frame_logs, label_frames, match_radius, sequence=index))
    return report(frames, thresholds)
