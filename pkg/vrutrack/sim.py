# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

"""
Synthetic scenes of pedestrians and bicyclists with noisy detections.

Actors follow piecewise static / constant velocity / constant acceleration
motion with random mode switches on the base frame grid, so positions and
velocities are analytic at any time. Each sensor channel samples the scene
at its own rate and offset and perturbs the labels with noise, dropouts,
duplicates and clutter.
"""

import bisect
import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from vrutrack import protocol
from vrutrack.core import BevBox, Detection, Frame, Label, LabelFrame

logger = logging.getLogger(__name__)

_SHAPES = {
    # length, width, height
    protocol.pedestrian: (0.6, 0.6, 1.7),
    protocol.bicyclist: (1.8, 0.6, 1.7),
}


@dataclass
class SensorModel:
    """
    Detection model of one channel.

    `sigma_pos`
      lateral position noise (m); range noise is `range_factor` times larger,
      measured from the sensor `origin`

    `fp_rate`
      mean clutter detections per frame (Poisson)

    `proximity_dropout`
      extra miss probability per neighbor closer than 1 m
    """

    channel: str = protocol.lidar
    sigma_pos: float = 0.1
    range_factor: float = 1.0
    p_detect: float = 0.95
    fp_rate: float = 0.5
    duplicate_prob: float = 0.0
    duplicate_offset: float = 0.3
    proximity_dropout: float = 0.05
    size_sigma: float = 0.02
    heading_sigma: float = 0.05
    confidence_mean: float = 0.9
    confidence_spread: float = 0.05
    rate: float = protocol.frame_rate
    offset: float = 0.0
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.channel not in protocol.sensors:
            raise ValueError(f"unknown sensor channel {self.channel!r}")
        for name in ("p_detect", "duplicate_prob", "proximity_dropout", "confidence_mean"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        for name in ("sigma_pos", "range_factor", "fp_rate", "size_sigma", "heading_sigma", "confidence_spread"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.rate <= 0:
            raise ValueError("sensor rate must be positive")
        self.origin = tuple(self.origin)

    @classmethod
    def lidar(cls, **overrides):
        return cls(**{"channel": protocol.lidar, **overrides})

    @classmethod
    def camera(cls, **overrides):
        defaults = dict(
            channel=protocol.camera,
            sigma_pos=0.5,
            range_factor=3.0,
            p_detect=0.85,
            fp_rate=1.0,
            duplicate_prob=0.05,
            size_sigma=0.05,
            heading_sigma=0.1,
            confidence_mean=0.7,
            confidence_spread=0.1,
            offset=0.05,
        )
        return cls(**{**defaults, **overrides})

    @classmethod
    def perfect(cls, channel=protocol.lidar, **overrides):
        """No noise, no misses, no clutter."""
        defaults = dict(
            channel=channel,
            sigma_pos=0.0,
            range_factor=1.0,
            p_detect=1.0,
            fp_rate=0.0,
            duplicate_prob=0.0,
            proximity_dropout=0.0,
            size_sigma=0.0,
            heading_sigma=0.0,
            confidence_spread=0.0,
        )
        return cls(**{**defaults, **overrides})


def _default_sensor_models():
    return {protocol.lidar: SensorModel.lidar(), protocol.camera: SensorModel.camera()}


@dataclass
class ScenarioConfig:
    n_pedestrians: int = 20
    n_bicyclists: int = 5
    duration: float = 10.0
    frame_rate: float = protocol.frame_rate
    extent: float = 50.0
    switch_rate: float = 0.3
    pedestrian_speed: tuple = (0.0, 2.0)
    bicyclist_speed: tuple = (0.0, 8.0)
    pedestrian_acceleration: float = 0.8
    bicyclist_acceleration: float = 2.0
    min_spacing: float = 0.8
    repulsion_radius: float = 1.0
    clutter_clearance: float = 0.5 * protocol.gating_radius
    sensors: tuple = (protocol.lidar,)
    sensor_models: dict = field(default_factory=_default_sensor_models)
    seed: int = 0

    def __post_init__(self):
        if self.n_pedestrians < 0 or self.n_bicyclists < 0:
            raise ValueError("actor counts must be non-negative")
        if self.duration <= 0 or self.frame_rate <= 0 or self.extent <= 0:
            raise ValueError("duration, frame_rate and extent must be positive")
        if self.switch_rate < 0:
            raise ValueError("switch_rate must be non-negative")
        self.sensors = tuple(self.sensors)
        for channel in self.sensors:
            if channel not in self.sensor_models:
                raise ValueError(f"no sensor model for channel {channel!r}")

    def speed_range(self, category):
        return self.pedestrian_speed if category == protocol.pedestrian else self.bicyclist_speed

    def max_acceleration(self, category):
        if category == protocol.pedestrian:
            return self.pedestrian_acceleration
        return self.bicyclist_acceleration


@dataclass(frozen=True)
class Segment:
    start: float
    mode: str
    position: tuple
    velocity: tuple
    acceleration: tuple

    def state_at(self, t):
        tau = t - self.start
        (px, py), (vx, vy), (ax, ay) = self.position, self.velocity, self.acceleration
        return (
            px + vx * tau + 0.5 * ax * tau * tau,
            py + vy * tau + 0.5 * ay * tau * tau,
            vx + ax * tau,
            vy + ay * tau,
        )


@dataclass
class Actor:
    track_id: int
    category: str
    shape: tuple
    segments: list = field(default_factory=list)
    _starts: list = field(default_factory=list, repr=False)

    def add(self, segment):
        self.segments.append(segment)
        self._starts.append(segment.start)

    def state_at(self, t):
        k = max(0, bisect.bisect_right(self._starts, t) - 1)
        return self.segments[k].state_at(t)

    def label_at(self, t):
        x, y, vx, vy = self.state_at(t)
        heading = math.atan2(vy, vx) if math.hypot(vx, vy) > 1e-6 else self._heading_before(t)
        length, width, height = self.shape
        return Label(self.track_id, t, BevBox(x, y, length, width, height, heading), vx, vy, self.category)

    def _heading_before(self, t):
        k = bisect.bisect_right(self._starts, t) - 1
        while k >= 0:
            vx, vy = self.segments[k].velocity
            ax, ay = self.segments[k].acceleration
            if math.hypot(vx, vy) > 1e-6:
                return math.atan2(vy, vx)
            if math.hypot(ax, ay) > 1e-6:
                return math.atan2(ay, ax)
            k -= 1
        return 0.0


@dataclass
class Scenario:
    """Sensor frames in time order with ground truth at each frame time."""

    config: ScenarioConfig
    actors: list
    frames: list
    label_frames: list
    clutter: set = field(default_factory=set)

    @property
    def n_actors(self):
        return len(self.actors)

    def label_records(self):
        return [label for lf in self.label_frames for label in lf.labels]


def _unit(rng):
    angle = rng.uniform(-math.pi, math.pi)
    return math.cos(angle), math.sin(angle)


def _place_actors(config, rng):
    half = 0.5 * config.extent
    categories = [protocol.pedestrian] * config.n_pedestrians + [protocol.bicyclist] * config.n_bicyclists
    positions = []
    for _ in categories:
        for _attempt in range(20):
            p = rng.uniform(-half, half, size=2)
            if all(math.hypot(*(p - q)) >= config.min_spacing for q in positions):
                break
        positions.append(p)
    return categories, positions


def _next_mode(mode, rng):
    return [m for m in protocol.motion_models if m != mode][int(rng.integers(2))]


def _new_segment(config, category, mode, t, x, y, vx, vy, away, rng):
    """
    Starts a segment at (x, y) with incoming velocity (vx, vy); `away`, when
    set, is a unit direction the actor is steered along (neighbor or border).
    Returns (segment, frames the segment lasts).
    """
    lo, hi = config.speed_range(category)
    speed = math.hypot(vx, vy)
    frames = 1 + int(rng.geometric(min(1.0, config.switch_rate / config.frame_rate))) if config.switch_rate else 10**9
    if away is not None and mode == protocol.static:
        mode = protocol.cv

    if mode == protocol.static:
        return Segment(t, mode, (x, y), (0.0, 0.0), (0.0, 0.0)), frames

    if speed > 1e-6:
        direction = (vx / speed, vy / speed)
    else:
        direction = _unit(rng)
    if away is not None:
        direction = away

    if mode == protocol.cv:
        new_speed = rng.uniform(max(lo, 0.2 * hi), hi) if speed <= 1e-6 or away is not None else speed
        velocity = (direction[0] * new_speed, direction[1] * new_speed)
        return Segment(t, mode, (x, y), velocity, (0.0, 0.0)), frames

    a_max = config.max_acceleration(category)
    magnitude = rng.uniform(0.2 * a_max, a_max)
    sign = 1.0 if speed < 0.5 * (lo + hi) else -1.0
    if away is not None:
        sign = 1.0
    velocity = (direction[0] * speed, direction[1] * speed)
    acceleration = (sign * direction[0] * magnitude, sign * direction[1] * magnitude)
    # Keep the speed inside [lo, hi] for the whole segment.
    limit = (hi - speed) / magnitude if sign > 0 else (speed - lo) / magnitude
    frames = max(1, min(frames, int(limit * config.frame_rate)))
    return Segment(t, mode, (x, y), velocity, acceleration), frames


def _steering(config, index, positions):
    """Unit direction away from the closest crowding neighbor or back toward the scene."""
    x, y = positions[index]
    half = 0.5 * config.extent
    if abs(x) > half or abs(y) > half:
        norm = math.hypot(x, y)
        return (-x / norm, -y / norm)
    deltas = positions - positions[index]
    distances = np.hypot(deltas[:, 0], deltas[:, 1])
    distances[index] = np.inf
    j = int(np.argmin(distances)) if len(distances) > 1 else None
    if j is None or distances[j] >= config.repulsion_radius:
        return None
    if distances[j] < 1e-9:
        return None
    return (-deltas[j, 0] / distances[j], -deltas[j, 1] / distances[j])


def simulate_motion(config, rng):
    categories, positions = _place_actors(config, rng)
    actors = [
        Actor(i + 1, category, _SHAPES[category])
        for i, category in enumerate(categories)
    ]
    n_frames = int(math.floor(config.duration * config.frame_rate + 1e-9)) + 1
    remaining = []
    for actor, (x, y) in zip(actors, positions):
        mode = protocol.motion_models[int(rng.integers(3))]
        segment, frames = _new_segment(config, actor.category, mode, 0.0, float(x), float(y), 0.0, 0.0, None, rng)
        actor.add(segment)
        remaining.append(frames)

    for k in range(1, n_frames):
        t = round(k / config.frame_rate, 9)
        states = np.array([a.state_at(t) for a in actors]).reshape(-1, 4)
        for i, actor in enumerate(actors):
            remaining[i] -= 1
            if remaining[i] > 0:
                continue
            x, y, vx, vy = states[i]
            away = _steering(config, i, states[:, :2])
            mode = _next_mode(actor.segments[-1].mode, rng)
            segment, frames = _new_segment(config, actor.category, mode, t, x, y, vx, vy, away, rng)
            actor.add(segment)
            remaining[i] = frames
    return actors


def _frame_times(config, model):
    times = []
    k = 0
    while True:
        t = model.offset + k / model.rate
        if t > config.duration + 1e-9:
            return times
        times.append(round(t, 9))
        k += 1


def _noisy_box(box, model, rng):
    dx, dy = box.cx - model.origin[0], box.cy - model.origin[1]
    distance = math.hypot(dx, dy)
    radial = (dx / distance, dy / distance) if distance > 1e-9 else (1.0, 0.0)
    lateral = (-radial[1], radial[0])
    e_range = rng.normal(0.0, model.sigma_pos * model.range_factor) if model.sigma_pos else 0.0
    e_lat = rng.normal(0.0, model.sigma_pos) if model.sigma_pos else 0.0
    cx = box.cx + e_range * radial[0] + e_lat * lateral[0]
    cy = box.cy + e_range * radial[1] + e_lat * lateral[1]
    length, width = box.length, box.width
    if model.size_sigma:
        length = max(0.1, length + rng.normal(0.0, model.size_sigma))
        width = max(0.1, width + rng.normal(0.0, model.size_sigma))
    heading = box.heading + (rng.normal(0.0, model.heading_sigma) if model.heading_sigma else 0.0)
    return BevBox(cx, cy, length, width, box.height, heading)


def _confidence(model, rng):
    if not model.confidence_spread:
        return model.confidence_mean
    return float(np.clip(rng.normal(model.confidence_mean, model.confidence_spread), 0.05, 1.0))


def _clutter(config, model, labels, rng, t, prefix, clutter_ids):
    half = 0.5 * config.extent
    centers = np.array([(l.box.cx, l.box.cy) for l in labels]).reshape(-1, 2)
    detections = []
    for n in range(int(rng.poisson(model.fp_rate))):
        for _attempt in range(10):
            p = rng.uniform(-half, half, size=2)
            if not len(centers) or np.min(np.hypot(*(centers - p).T)) >= config.clutter_clearance:
                break
        category = protocol.classes[int(rng.integers(2))]
        length, width, height = _SHAPES[category]
        box = BevBox(float(p[0]), float(p[1]), length, width, height, rng.uniform(-math.pi, math.pi))
        det_id = f"{prefix}-fp{n}"
        clutter_ids.add(det_id)
        detections.append(Detection(det_id, t, box, category, _confidence(model, rng) * 0.5, model.channel))
    return detections


def _detect(config, model, labels, rng, t, prefix, clutter_ids):
    centers = np.array([(l.box.cx, l.box.cy) for l in labels]).reshape(-1, 2)
    detections = []
    for i, label in enumerate(labels):
        p_detect = model.p_detect
        if model.proximity_dropout and len(centers) > 1:
            close = int(np.sum(np.hypot(*(centers - centers[i]).T) < 1.0)) - 1
            p_detect *= (1.0 - model.proximity_dropout) ** close
        if rng.random() >= p_detect:
            continue
        box = _noisy_box(label.box, model, rng)
        detections.append(
            Detection(f"{prefix}-{label.track_id}", t, box, label.category, _confidence(model, rng), model.channel)
        )
        if model.duplicate_prob and rng.random() < model.duplicate_prob:
            dx, dy = rng.normal(0.0, model.duplicate_offset, size=2)
            detections.append(
                Detection(
                    f"{prefix}-{label.track_id}d",
                    t,
                    box.translated(float(dx), float(dy)),
                    label.category,
                    _confidence(model, rng) * 0.8,
                    model.channel,
                )
            )
    detections.extend(_clutter(config, model, labels, rng, t, prefix, clutter_ids))
    order = rng.permutation(len(detections)).tolist()
    return [detections[k] for k in order]


def generate_scenario(config):
    """Deterministic per `config.seed`: motion and every sensor draw from their own streams."""
    actors = simulate_motion(config, np.random.default_rng([config.seed, 0]))
    schedule = []
    for index, channel in enumerate(config.sensors):
        model = config.sensor_models[channel]
        schedule.extend((t, index, channel) for t in _frame_times(config, model))
    schedule.sort()

    streams = {
        channel: np.random.default_rng([config.seed, 1 + index])
        for index, channel in enumerate(config.sensors)
    }
    frames, label_frames, clutter_ids = [], [], set()
    for k, (t, _, channel) in enumerate(schedule):
        model = config.sensor_models[channel]
        labels = [actor.label_at(t) for actor in actors]
        prefix = f"{channel[0]}{k}"
        detections = _detect(config, model, labels, streams[channel], t, prefix, clutter_ids)
        frames.append(Frame(t, channel, detections))
        label_frames.append(LabelFrame(t, labels))
    logger.debug(
        "scenario seed %d: %d actors, %d frames over %s",
        config.seed,
        len(actors),
        len(frames),
        "+".join(config.sensors),
    )
    return Scenario(config, actors, frames, label_frames, clutter_ids)


def density_sweep(base_config, densities):
    """One scenario per pedestrian count, all sharing the base seed and extent."""
    return [
        generate_scenario(dataclasses.replace(base_config, n_pedestrians=int(n)))
        for n in densities
    ]


def scenario_configs(base_config, count, seed=None):
    """`count` copies of `base_config` with consecutive seeds."""
    start = base_config.seed if seed is None else seed
    return [dataclasses.replace(base_config, seed=start + i) for i in range(count)]
