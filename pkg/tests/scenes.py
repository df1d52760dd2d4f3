# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

import math
from types import SimpleNamespace

import numpy as np

from vrutrack import protocol
from vrutrack.core import BevBox, Detection, Frame, Label, LabelFrame, StateEstimate
from vrutrack.network import ModelOutput
from vrutrack.tracker import FrameLog, TrackRecord

PED_SHAPE = (0.6, 0.6, 1.7)

SIMPLE_LOG = """#VRULOG
#VRU-VERSION:1
#VRU-FRAME:0.1,lidar
#VRU-DETECTION:l1-3,0.1,2.5,-1,0.6,0.6,1.7,0,pedestrian,0.9,lidar,0
#VRU-LABEL:3,0.1,2.5,-1,0.6,0.6,1.7,0,1.2,0,pedestrian
"""

TRACK_LOG = """#VRULOG
#VRU-VERSION:1
#VRU-TRACK:0.2,7,pedestrian,1,2,0.5,0,0.1,0.1,0.2,0.2,1,2,0.6,0.6,1.7,0,1
"""

TWO_FRAME_LOG = """#VRULOG
#VRU-VERSION:1
#VRU-FRAME:0,lidar
#VRU-DETECTION:a,0,1,1,0.6,0.6,1.7,0,pedestrian,0.9,lidar,0
#VRU-DETECTION:b,0,5,1,1.8,0.6,1.7,1.5,bicyclist,0.75,lidar,0
#VRU-FRAME:0.05,camera
#VRU-FRAME:0.1,lidar
#VRU-DETECTION:c,0.1,1.1,1,0.6,0.6,1.7,0,pedestrian,0.8,lidar,0
"""

NAN_LOG = """#VRULOG
#VRU-VERSION:1
#VRU-DETECTION:l1-3,0.1,nan,-1,0.6,0.6,1.7,0,pedestrian,0.9,lidar,0
"""

SHORT_RECORD_LOG = """#VRULOG
#VRU-VERSION:1
#VRU-LABEL:3,0.1,2.5,-1,0.6,0.6
"""

UNKNOWN_TAG_LOG = """#VRULOG
#VRU-VERSION:1
#VRU-WEATHER:rain
#VRU-FRAME:0.1,lidar
"""

FUTURE_VERSION_LOG = """#VRULOG
#VRU-VERSION:9
"""

BAD_CLASS_LOG = """#VRULOG
#VRU-DETECTION:l1-3,0.1,2.5,-1,0.6,0.6,1.7,0,scooter,0.9,lidar,0
"""


def box(cx=0.0, cy=0.0, length=0.6, width=0.6, height=1.7, heading=0.0):
    return BevBox(cx, cy, length, width, height, heading)


def detection(id, time, cx, cy, sensor=protocol.lidar, confidence=0.9, category=protocol.pedestrian, shape=PED_SHAPE):
    return Detection(id, time, box(cx, cy, *shape), category, confidence, sensor)


def label(track_id, time, cx, cy, vx=0.0, vy=0.0, category=protocol.pedestrian, shape=PED_SHAPE):
    return Label(track_id, time, box(cx, cy, *shape), vx, vy, category)


def state(x, y, vx=0.0, vy=0.0, sigma=0.1, sigma_v=None):
    sigma_v = sigma if sigma_v is None else sigma_v
    return StateEstimate(x, y, vx, vy, sigma, sigma, sigma_v, sigma_v)


def track(id, x, y, vx=0.0, vy=0.0, sigma=0.5, previous=None, last_update=0.0, category=protocol.pedestrian):
    """
    Stand-in for a tracker Track with everything association, features and
    label generation read from it.
    """
    estimate = state(x, y, vx, vy, sigma)
    mean = np.array([x, y, vx, vy], dtype=float)
    cov = np.diag([sigma**2] * 4)
    return SimpleNamespace(
        id=id,
        category=category,
        estimate=estimate,
        previous_state=previous if previous is not None else estimate,
        moments=(mean, cov),
        last_box=box(x, y),
        last_update=last_update,
    )


def record(time, track_id, x, y, vx=0.0, vy=0.0, confirmed=True, category=protocol.pedestrian):
    return TrackRecord(time, track_id, category, state(x, y, vx, vy), box(x, y), confirmed)


def frame_log(time, *records):
    return FrameLog(time, list(records))


def label_frame(time, *labels):
    return LabelFrame(time, list(labels))


def crossing_scene(duration=10.0, rate=10.0):
    """
    Two pedestrians crossing head-on with 1 m lateral separation, seen by a
    perfect lidar: A at y=+0.5 walks +x from x=-5, B at y=-0.5 walks -x from
    x=+5. A is detected with confidence 0.9, B with 0.8.
    """
    frames, labels = [], []
    for k in range(int(round(duration * rate)) + 1):
        t = round(k / rate, 9)
        ax, bx = -5.0 + t, 5.0 - t
        frames.append(
            Frame(
                t,
                protocol.lidar,
                [
                    detection(f"a{k}", t, ax, 0.5, confidence=0.9),
                    detection(f"b{k}", t, bx, -0.5, confidence=0.8),
                ],
            )
        )
        labels.append(label_frame(t, label(1, t, ax, 0.5, vx=1.0), label(2, t, bx, -0.5, vx=-1.0)))
    return frames, labels


class ScriptedNetwork:
    """
    Feed-forward stand-in for a trained network on `crossing_scene`: always
    associates, scores a pair by its predicted-to-detection distance and
    reports the detection centroid with velocity +1 m/s (confidence above
    0.85) or -1 m/s. On call number `swap_call` the scores are negated, which
    makes the cross pairs win.
    """

    is_recurrent = False

    def __init__(self, swap_call=None, sigma=0.01):
        self.swap_call = swap_call
        self.sigma = sigma
        self.calls = 0

    def forward(self, features, memory=None):
        features = np.atleast_2d(features)
        raw = np.zeros((len(features), protocol.output_dim))
        raw[:, 0] = 5.0
        raw[:, 2] = features[:, 20]
        if self.calls == self.swap_call:
            raw[:, 2] = -features[:, 20]
        raw[:, 5] = np.where(features[:, 22] > 0.85, 1.0, -1.0)
        raw[:, 7:11] = math.log(self.sigma)
        self.calls += 1
        return ModelOutput(raw), None


class ConstantNetwork:
    """Returns the same raw output row for every pair."""

    is_recurrent = False

    def __init__(self, row):
        self.row = np.asarray(row, dtype=float)

    def forward(self, features, memory=None):
        n = len(np.atleast_2d(features))
        return ModelOutput(np.tile(self.row, (n, 1))), None
