# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

"""
Feature vectors for (track, detection) candidate pairs.

Layout (`protocol.feature_names`, layout id `protocol.feature_layout_id`):

    0-4    detection shape      length, width, height, cx', cy'
    5-9    track last shape     length, width, height, cx', cy'
    10-13  previous state       x', y', vx, vy
    14-17  predicted state      x', y', vx, vy
    18-20  difference           dx, dy, |d|     (predicted - detection)
    21     seconds since the track's last update
    22     detector confidence
    23-24  sensor one-hot       lidar, camera

Primed coordinates are relative to the track's predicted position, which
makes the vector invariant to translating the whole scene.
"""

import numpy as np

from vrutrack import protocol


def _track_table(tracks):
    rows = []
    for t in tracks:
        box, prev, pred = t.last_box, t.previous_state, t.estimate
        rows.append(
            (
                box.length,
                box.width,
                box.height,
                box.cx,
                box.cy,
                prev.x,
                prev.y,
                prev.vx,
                prev.vy,
                pred.x,
                pred.y,
                pred.vx,
                pred.vy,
                t.last_update,
            )
        )
    return np.array(rows, dtype=float).reshape(-1, 14)


def _detection_table(detections):
    rows = [
        (
            d.box.length,
            d.box.width,
            d.box.height,
            d.box.cx,
            d.box.cy,
            d.confidence,
            1.0 if d.sensor == protocol.camera else 0.0,
        )
        for d in detections
    ]
    return np.array(rows, dtype=float).reshape(-1, 7)


def extract_pairs(tracks, detections, track_index, detection_index, now):
    """
    Feature matrix for the pairs (tracks[track_index[k]],
    detections[detection_index[k]]), shaped (n_pairs, 25).
    """
    track_index = np.asarray(track_index, dtype=int)
    detection_index = np.asarray(detection_index, dtype=int)
    t = _track_table(tracks)[track_index]
    d = _detection_table(detections)[detection_index]
    px, py = t[:, 9], t[:, 10]

    out = np.empty((len(track_index), protocol.feature_dim))
    out[:, 0:3] = d[:, 0:3]
    out[:, 3] = d[:, 3] - px
    out[:, 4] = d[:, 4] - py
    out[:, 5:8] = t[:, 0:3]
    out[:, 8] = t[:, 3] - px
    out[:, 9] = t[:, 4] - py
    out[:, 10] = t[:, 5] - px
    out[:, 11] = t[:, 6] - py
    out[:, 12:14] = t[:, 7:9]
    out[:, 14:16] = 0.0
    out[:, 16:18] = t[:, 11:13]
    out[:, 18] = px - d[:, 3]
    out[:, 19] = py - d[:, 4]
    out[:, 20] = np.hypot(out[:, 18], out[:, 19])
    out[:, 21] = now - t[:, 13]
    out[:, 22] = d[:, 5]
    out[:, 23] = 1.0 - d[:, 6]
    out[:, 24] = d[:, 6]
    return out


def extract_features(track, detection, now):
    """Feature vector of a single gated pair; `track` must be predicted to `now`."""
    return extract_pairs([track], [detection], [0], [0], now)[0]
