# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

"""
Per-frame tracking pipeline:

    predict -> gate -> score -> filter -> assign -> observe -> IMM update -> lifecycle

Each phase is a method of `Tracker` so callers (label generation, benchmarks)
can drive the phases individually; `step` runs all of them.
"""

import itertools
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from vrutrack import protocol
from vrutrack.association import ASSIGNERS, Assignment, gate, score_pairs
from vrutrack.core import StateEstimate
from vrutrack.features import extract_pairs
from vrutrack.imm import ImmConfig, ImmState, Observation, ballistic_rollout, imm_update
from vrutrack.mixins import GroupedRecordMixin, RecordMixin
from vrutrack.network import ModelOutput, TrackMemory

logger = logging.getLogger(__name__)


class OutOfOrderFrameError(ValueError):
    def __init__(self, time, last_time):
        self.time = time
        self.last_time = last_time

    def __str__(self):
        return f"frame at {self.time} does not follow the last processed frame at {self.last_time}"


@dataclass
class TrackerConfig:
    """
    `gating_radius` (m) and `max_age` (frames a track may go unseen) drive
    the lifecycle; `mode` picks the association scorer.

    Learned modes only:

    `association_output`
      which network heads drive association: probability+score,
      probability (rank by 1 - p_assoc) or score (keep score < `score_threshold`)

    `learned_observation`
      update the IMM with the network's 4D state instead of the detection
      position

    `report_learned_state`
      report the network's state for matched tracks instead of the fused IMM
      state
    """

    gating_radius: float = protocol.gating_radius
    max_age: int = protocol.max_age
    mode: str = protocol.mode_mahalanobis
    association_output: str = protocol.output_probability_and_score
    score_threshold: float = 0.1
    probability_filter: bool = True
    learned_observation: bool = True
    report_learned_state: bool = False
    assignment: str = "greedy"
    require_confirmation: bool = True
    confirm_hits: int = 2
    confirm_window: int = 3
    imm: ImmConfig = field(default_factory=ImmConfig)

    def __post_init__(self):
        if self.gating_radius <= 0:
            raise ValueError("gating_radius must be positive")
        if self.max_age < 1:
            raise ValueError("max_age must be at least 1")
        if self.mode not in protocol.association_modes:
            raise ValueError(f"unknown association mode {self.mode!r}")
        if self.association_output not in protocol.association_outputs:
            raise ValueError(f"unknown association output {self.association_output!r}")
        if self.assignment not in ASSIGNERS:
            raise ValueError(f"unknown assignment {self.assignment!r}")
        if not 1 <= self.confirm_hits <= self.confirm_window:
            raise ValueError("need 1 <= confirm_hits <= confirm_window")

    @property
    def is_learned(self):
        return self.mode in protocol.learned_modes


class Track:
    """
    A live track hypothesis. The IMM state is always at the tracker's current
    time; `estimate` is its fused 4D state and `previous_state` the estimate
    one frame earlier.
    """

    def __init__(self, id, detection, imm, config, memory=None):
        self.id = id
        self.category = detection.category
        self.last_box = detection.box
        self.last_update = detection.time
        self.frames_since_seen = 0
        self.hit_count = 1
        self.hits = deque([True], maxlen=config.confirm_window)
        self.confirmed = not config.require_confirmation or config.confirm_hits <= 1
        self.memory = memory
        self.learned_state = None
        self.set_state(imm, imm.fused)
        self.previous_state = self.estimate

    def set_state(self, imm, moments):
        self.imm = imm
        self.moments = moments
        self.estimate = StateEstimate.from_moments(*moments)

    def __repr__(self):
        return f"Track(id={self.id}, {self.category}, unseen={self.frames_since_seen})"


@dataclass(frozen=True)
class TrackRecord(RecordMixin):
    tag = protocol.ext_vru_track

    time: float
    track_id: int
    category: str
    state: StateEstimate
    box: object
    confirmed: bool = True

    def record_values(self):
        s, b = self.state, self.box
        return (
            self.time,
            self.track_id,
            self.category,
            s.x,
            s.y,
            s.vx,
            s.vy,
            s.sigma_x,
            s.sigma_y,
            s.sigma_vx,
            s.sigma_vy,
            b.cx,
            b.cy,
            b.length,
            b.width,
            b.height,
            b.heading,
            self.confirmed,
        )


@dataclass
class FrameLog(GroupedRecordMixin):
    """Every live track after one frame; metrics only look at confirmed ones."""

    time: float
    records: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def confirmed(self):
        return [r for r in self.records if r.confirmed]

    def track_ids(self):
        return [r.track_id for r in self.records]


class Tracker:
    """
    Stateful tracking-by-detection fold over frames of one sequence.

    `network` is required for the learned modes; anything with
    `forward(features, memory)` and `is_recurrent` will do.
    """

    def __init__(self, config=None, network=None):
        self.config = config or TrackerConfig()
        if self.config.is_learned and network is None:
            raise ValueError(f"mode {self.config.mode!r} needs a trained network")
        self.network = network
        self.models = self.config.imm.motion_models()
        self.tracks = []
        self.time = None
        self._ids = itertools.count(1)

    @property
    def recurrent(self):
        return self.network is not None and self.network.is_recurrent

    def predict(self, time):
        """Rolls every track forward to `time`."""
        if self.time is not None and not time > self.time:
            raise OutOfOrderFrameError(time, self.time)
        if self.tracks:
            dt = time - self.time
            predicted = ballistic_rollout(ImmState.stack([t.imm for t in self.tracks]), dt)
            means, covs = predicted.fused
            for i, track in enumerate(self.tracks):
                track.previous_state = track.estimate
                track.set_state(predicted[i], (means[i], covs[i]))
                track.learned_state = None
        self.time = time

    def candidates(self, detections):
        """
        Gated and scored candidate pairs; learned modes also drop pairs the
        network considers mis-associations.
        """
        config = self.config
        pairs = gate(self.tracks, detections, config.gating_radius)
        if not pairs:
            return []
        if not config.is_learned:
            return score_pairs(pairs, config.mode, config.imm.measurement_sigma)

        self.evaluate(pairs, detections)
        kept = []
        for pair in pairs:
            p_assoc = pair.probability
            if config.association_output == protocol.output_score:
                if pair.score < config.score_threshold or not config.probability_filter:
                    kept.append(pair)
                continue
            if config.association_output == protocol.output_probability:
                pair.score = 1.0 - p_assoc
            if p_assoc > 1.0 - p_assoc or not config.probability_filter:
                kept.append(pair)
        return kept

    def evaluate(self, pairs, detections):
        """Runs the network over `pairs` in one batch and stores its outputs on them."""
        track_pos = {id(t): i for i, t in enumerate(self.tracks)}
        det_pos = {id(d): j for j, d in enumerate(detections)}
        track_index = np.array([track_pos[id(p.track)] for p in pairs])
        detection_index = np.array([det_pos[id(p.detection)] for p in pairs])
        features = extract_pairs(self.tracks, detections, track_index, detection_index, self.time)
        memory = None
        if self.recurrent:
            memory = TrackMemory(
                np.stack([self.tracks[i].memory.c for i in track_index]),
                np.stack([self.tracks[i].memory.h for i in track_index]),
            )
        output, new_memory = self.network.forward(features, memory)
        probabilities = output.p_assoc
        scores = output.score
        for k, pair in enumerate(pairs):
            pair.features = features[k]
            pair.output = ModelOutput(output.raw[k])
            pair.probability = float(probabilities[k])
            pair.score = float(scores[k])
            if new_memory is not None:
                pair.memory = new_memory[k]
        return pairs

    def associate(self, pairs, detections=()):
        assign = ASSIGNERS[self.config.assignment]
        return assign(pairs, self.tracks, list(detections))

    def observations(self, matches):
        """One stacked Observation for the matched pairs (2D or 4D per mode)."""
        if self.config.is_learned and self.config.learned_observation:
            anchors = np.array([(p.detection.box.cx, p.detection.box.cy) for p in matches])
            raw = np.stack([p.output.raw for p in matches])
            output = ModelOutput(raw)
            return Observation.state(output.absolute_state(anchors), output.sigma)
        sigma = self.config.imm.measurement_sigma
        return Observation.position(
            [p.detection.box.cx for p in matches],
            [p.detection.box.cy for p in matches],
            [sigma[p.detection.sensor] for p in matches],
        )

    def commit(self, time, assignment, observations=None):
        """
        Applies an assignment: IMM updates for matches (with `observations`
        if given, else `self.observations`), ageing and removal of unmatched
        tracks, births from unmatched detections.
        """
        matches = assignment.matches
        if matches:
            if observations is None:
                observations = self.observations(matches)
            tracks = [p.track for p in matches]
            updated = imm_update(ImmState.stack([t.imm for t in tracks]), observations)
            means, covs = updated.fused
            for k, (pair, track) in enumerate(zip(matches, tracks)):
                track.set_state(updated[k], (means[k], covs[k]))
                self._observed(track, pair, time)

        matched = {id(p.track) for p in matches}
        survivors = []
        for track in self.tracks:
            if id(track) not in matched:
                track.frames_since_seen += 1
                track.hits.append(False)
                if track.frames_since_seen > self.config.max_age:
                    logger.debug("track %d removed after %d unseen frames", track.id, track.frames_since_seen)
                    continue
            survivors.append(track)
        self.tracks = survivors

        for detection in assignment.unmatched_detections:
            if not detection.is_null:
                self.tracks.append(self._birth(detection))

    def _observed(self, track, pair, time):
        detection = pair.detection
        track.last_box = detection.box if not detection.is_null else track.last_box
        track.last_update = time
        track.frames_since_seen = 0
        track.hit_count += 1
        track.hits.append(True)
        if not track.confirmed and sum(track.hits) >= self.config.confirm_hits:
            track.confirmed = True
        if pair.memory is not None:
            track.memory = pair.memory
        if pair.output is not None and self.config.report_learned_state:
            track.learned_state = (
                pair.output.absolute_state((detection.box.cx, detection.box.cy)),
                pair.output.sigma,
            )

    def _birth(self, detection):
        imm = self.config.imm.initial_state(
            detection.box.cx, detection.box.cy, detection.category, detection.sensor, self.models
        )
        memory = self.network.zero_memory() if self.recurrent else None
        track = Track(next(self._ids), detection, imm, self.config, memory)
        logger.debug("track %d born from detection %s", track.id, detection.id)
        return track

    def frame_log(self):
        records = []
        for track in self.tracks:
            state = track.estimate
            if track.learned_state is not None:
                mean, sigma = track.learned_state
                state = StateEstimate(*(float(v) for v in mean), *(float(s) for s in sigma))
            box = track.last_box.moved_to(state.x, state.y)
            records.append(
                TrackRecord(self.time, track.id, track.category, state, box, track.confirmed)
            )
        return FrameLog(self.time, records)

    def step(self, frame):
        """Processes one sensor frame and returns the log of all live tracks."""
        self.predict(frame.time)
        pairs = self.candidates(frame.detections)
        assignment = self.associate(pairs, frame.detections)
        self.commit(frame.time, assignment)
        logger.debug(
            "t=%.3f %s: %d detections, %d pairs, %d matched, %d live tracks",
            frame.time,
            frame.sensor,
            len(frame.detections),
            len(pairs),
            len(assignment.matches),
            len(self.tracks),
        )
        return self.frame_log()

    def run_sequence(self, frames):
        return [self.step(frame) for frame in frames]


def run_sequence(frames, config=None, network=None):
    """Tracks a whole sequence with a fresh tracker."""
    return Tracker(config, network).run_sequence(frames)


__all__ = [
    "Assignment",
    "FrameLog",
    "OutOfOrderFrameError",
    "Track",
    "TrackRecord",
    "Tracker",
    "TrackerConfig",
    "run_sequence",
]
