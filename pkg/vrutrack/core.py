# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

"""
Shared value types and bird's-eye-view geometry.

All geometry lives in a single, locally level world frame per sequence.
Boxes are oriented rectangles; heading is carried for shape but is not
part of the tracked state.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from vrutrack import protocol
from vrutrack.mixins import RecordMixin

# Seconds, strictly increasing across the frames of one sequence.
Timestamp = float


def normalize_angle(theta):
    """Maps an angle to (-pi, pi]."""
    angle = math.remainder(theta, 2.0 * math.pi)
    if angle <= -math.pi:
        angle += 2.0 * math.pi
    return angle


def _require_finite(owner, **values):
    for name, value in values.items():
        if not math.isfinite(value):
            raise ValueError(f"{owner}.{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class BevBox:
    """
    Oriented box in the BEV plane.

    `cx`, `cy`
      centroid, meters

    `length`, `width`, `height`
      extent, meters; zero extent is reserved for null detections

    `heading`
      radians, normalized to (-pi, pi]
    """

    cx: float
    cy: float
    length: float
    width: float
    height: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        _require_finite(
            "BevBox",
            cx=self.cx,
            cy=self.cy,
            length=self.length,
            width=self.width,
            height=self.height,
            heading=self.heading,
        )
        if self.length < 0 or self.width < 0 or self.height < 0:
            raise ValueError(
                f"BevBox extent must be non-negative, got "
                f"{self.length}x{self.width}x{self.height}"
            )
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    @property
    def area(self):
        return self.length * self.width

    @property
    def is_degenerate(self):
        return self.area <= 0.0

    @property
    def circumradius(self):
        return 0.5 * math.hypot(self.length, self.width)

    def corners(self):
        """Returns the four footprint corners, counter-clockwise, as a (4, 2) array."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rotation = np.array([[c, -s], [s, c]])
        return local @ rotation.T + np.array([self.cx, self.cy])

    def moved_to(self, cx, cy):
        return dataclasses.replace(self, cx=float(cx), cy=float(cy))

    def translated(self, dx, dy):
        return self.moved_to(self.cx + dx, self.cy + dy)


@dataclass(frozen=True)
class Detection(RecordMixin):
    """
    One sensor measurement at a timestamp.

    Null detections are synthetic "no match" targets added while generating
    training labels; they have a zero-area box and zero confidence.
    """

    tag = protocol.ext_vru_detection

    id: str
    time: Timestamp
    box: BevBox
    category: str
    confidence: float
    sensor: str
    is_null: bool = False

    def __post_init__(self):
        _require_finite("Detection", time=self.time, confidence=self.confidence)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.category not in protocol.classes:
            raise ValueError(f"unknown class {self.category!r}")
        if self.sensor not in protocol.sensors:
            raise ValueError(f"unknown sensor {self.sensor!r}")
        if self.is_null:
            if not self.box.is_degenerate or self.confidence != 0.0:
                raise ValueError("null detections need a zero-area box and confidence 0")
        elif self.box.is_degenerate:
            raise ValueError(f"detection {self.id!r} has a zero-area box")

    @classmethod
    def null(cls, time, cx, cy, category, sensor, id="null"):
        return cls(
            id=id,
            time=time,
            box=BevBox(cx, cy, 0.0, 0.0, 0.0, 0.0),
            category=category,
            confidence=0.0,
            sensor=sensor,
            is_null=True,
        )

    @property
    def centroid(self):
        return centroid(self.box)

    def record_values(self):
        b = self.box
        return (
            self.id,
            self.time,
            b.cx,
            b.cy,
            b.length,
            b.width,
            b.height,
            b.heading,
            self.category,
            self.confidence,
            self.sensor,
            self.is_null,
        )


@dataclass(frozen=True)
class StateEstimate:
    """Position/velocity with per-element standard deviations."""

    x: float
    y: float
    vx: float
    vy: float
    sigma_x: float
    sigma_y: float
    sigma_vx: float
    sigma_vy: float

    def __post_init__(self):
        sigmas = self.sigmas()
        if not np.all(sigmas > 0.0):
            raise ValueError(f"state sigmas must be positive, got {sigmas.tolist()}")

    @classmethod
    def from_moments(cls, mean, cov):
        sigma = np.sqrt(np.diagonal(cov))
        return cls(*(float(v) for v in mean[:4]), *(float(s) for s in sigma[:4]))

    @property
    def position(self):
        return np.array([self.x, self.y])

    @property
    def velocity(self):
        return np.array([self.vx, self.vy])

    @property
    def speed(self):
        return math.hypot(self.vx, self.vy)

    def as_vector(self):
        return np.array([self.x, self.y, self.vx, self.vy])

    def sigmas(self):
        return np.array([self.sigma_x, self.sigma_y, self.sigma_vx, self.sigma_vy])


@dataclass(frozen=True)
class Label(RecordMixin):
    """Ground-truth object state; `track_id` is stable across frames of one object."""

    tag = protocol.ext_vru_label

    track_id: int
    time: Timestamp
    box: BevBox
    vx: float
    vy: float
    category: str

    def __post_init__(self):
        _require_finite("Label", time=self.time, vx=self.vx, vy=self.vy)
        if self.category not in protocol.classes:
            raise ValueError(f"unknown class {self.category!r}")

    @property
    def centroid(self):
        return centroid(self.box)

    @property
    def velocity(self):
        return np.array([self.vx, self.vy])

    def record_values(self):
        b = self.box
        return (
            self.track_id,
            self.time,
            b.cx,
            b.cy,
            b.length,
            b.width,
            b.height,
            b.heading,
            self.vx,
            self.vy,
            self.category,
        )


def centroid(box):
    return (box.cx, box.cy)


def polygon_area(points):
    """Shoelace area of a simple polygon given as a sequence of (x, y)."""
    n = len(points)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = points[i]
        x1, y1 = points[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * abs(acc)


def clip_polygon(subject, clip):
    """
    Sutherland-Hodgman clipping of `subject` against the convex,
    counter-clockwise polygon `clip`. Returns the intersection vertices.
    """
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        points, output = output, []
        prev = points[-1]
        prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in points:
            cur_side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    output.append(_edge_crossing(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= 0.0:
                output.append(_edge_crossing(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return output


def _edge_crossing(p, q, side_p, side_q):
    t = side_p / (side_p - side_q)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def polygon_iou(a, b):
    """
    Intersection over union of the BEV footprints of two boxes.

    Height is ignored. Degenerate (zero-area) boxes give 0.
    """
    if a.is_degenerate or b.is_degenerate:
        return 0.0
    if math.hypot(a.cx - b.cx, a.cy - b.cy) > a.circumradius + b.circumradius:
        return 0.0
    inter = polygon_area(clip_polygon(a.corners().tolist(), b.corners().tolist()))
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


@dataclass
class Frame:
    """One sensor delivery: every detection shares `time` and `sensor`."""

    time: Timestamp
    sensor: str
    detections: list = dataclasses.field(default_factory=list)

    def __post_init__(self):
        _require_finite("Frame", time=self.time)
        if self.sensor not in protocol.sensors:
            raise ValueError(f"unknown sensor {self.sensor!r}")
        for detection in self.detections:
            if detection.time != self.time:
                raise ValueError(
                    f"detection {detection.id!r} at {detection.time} in frame at {self.time}"
                )


@dataclass
class LabelFrame:
    """Ground truth at one timestamp."""

    time: Timestamp
    labels: list = dataclasses.field(default_factory=list)

    def by_track(self):
        return {label.track_id: label for label in self.labels}
