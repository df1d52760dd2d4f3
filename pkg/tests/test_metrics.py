# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.
import itertools
import json
import math

import numpy as np
import pytest
import scenes

from vrutrack import protocol
from vrutrack.metrics import (
    EmptyGroundTruthError,
    MetricReport,
    clear_mot,
    evaluate,
    evaluate_sequences,
    match_frames,
    motve,
    motvo,
    report,
)


def _times(n):
    return [round(k / 10, 9) for k in range(n)]


def _perfect(n=5):
    labels, logs = [], []
    for t in _times(n):
        labels.append(scenes.label_frame(t, scenes.label(1, t, t, 0.0, vx=1.0), scenes.label(2, t, 5.0, 5.0)))
        logs.append(scenes.frame_log(t, scenes.record(t, 11, t, 0.0, vx=1.0), scenes.record(t, 12, 5.0, 5.0)))
    return logs, labels


def _hand_scene():
    """
    Three labels at x = 0, 10, 20 over ten frames. Label 1 is tracked by 1
    throughout, label 2 by 2 then by 4 from frame 5, label 3 by 3 until frame
    6; track 9 is a false positive in frames 0 and 1.
    """
    labels, logs = [], []
    for k, t in enumerate(_times(10)):
        labels.append(
            scenes.label_frame(t, scenes.label(1, t, 0.0, 0.0), scenes.label(2, t, 10.0, 0.0), scenes.label(3, t, 20.0, 0.0))
        )
        records = [scenes.record(t, 1, 0.0, 0.0), scenes.record(t, 2 if k < 5 else 4, 10.0, 0.0)]
        if k < 7:
            records.append(scenes.record(t, 3, 20.0, 0.0))
        if k < 2:
            records.append(scenes.record(t, 9, 50.0, 0.0))
        logs.append(scenes.frame_log(t, *records))
    return logs, labels


def test_perfect_tracks():
    logs, labels = _perfect()
    frames = match_frames(logs, labels)
    assert [2] * 5 == [len(f.matches) for f in frames]
    assert (1.0, 0.0, 1.0, 0.0, 0, 0) == clear_mot(frames)
    assert 0.0 == motve(frames)


def test_spurious_track_is_a_false_positive():
    t = 0.0
    labels = [scenes.label_frame(t, scenes.label(1, t, 0.0, 0.0))]
    logs = [scenes.frame_log(t, scenes.record(t, 1, 0.0, 0.0), scenes.record(t, 2, 30.0, 0.0))]
    frame = match_frames(logs, labels)[0]
    assert [2] == [r.track_id for r in frame.false_positives]
    assert 0.0 == clear_mot([frame])[0]


def test_track_taking_over_a_label_is_one_switch():
    labels, logs = [], []
    for k, t in enumerate(_times(3)):
        labels.append(scenes.label_frame(t, scenes.label(1, t, 0.0, 0.0)))
        logs.append(scenes.frame_log(t, scenes.record(t, 1 if k < 2 else 2, 0.0, 0.0)))
    frames = match_frames(logs, labels)
    assert [0, 0, 1] == [f.switches for f in frames]


def test_swapped_tracks_far_apart_switch_both_labels():
    labels, logs = [], []
    for k, t in enumerate(_times(3)):
        labels.append(scenes.label_frame(t, scenes.label(1, t, 0.0, 0.0), scenes.label(2, t, 10.0, 0.0)))
        a, b = (0.0, 10.0) if k < 2 else (10.0, 0.0)
        logs.append(scenes.frame_log(t, scenes.record(t, 1, a, 0.0), scenes.record(t, 2, b, 0.0)))
    assert 2 == sum(f.switches for f in match_frames(logs, labels))


def test_previous_pairing_is_kept_inside_the_radius():
    t0, t1 = _times(2)
    labels = [
        scenes.label_frame(t0, scenes.label(1, t0, 0.0, 0.0), scenes.label(2, t0, 1.5, 0.0)),
        scenes.label_frame(t1, scenes.label(1, t1, 0.0, 0.0), scenes.label(2, t1, 1.5, 0.0)),
    ]
    logs = [
        scenes.frame_log(t0, scenes.record(t0, 1, 0.0, 0.0), scenes.record(t0, 2, 1.5, 0.0)),
        # track 1 drifts closer to label 2 but stays within the radius of label 1
        scenes.frame_log(t1, scenes.record(t1, 1, 1.2, 0.0), scenes.record(t1, 2, 0.3, 0.0)),
    ]
    frames = match_frames(logs, labels)
    assert 0 == frames[1].switches
    assert {(1, 1), (2, 2)} == {(c.label.track_id, c.record.track_id) for c in frames[1].matches}


def test_match_radius_is_strict():
    t = 0.0
    labels = [scenes.label_frame(t, scenes.label(1, t, 0.0, 0.0))]
    logs = [scenes.frame_log(t, scenes.record(t, 1, protocol.match_radius, 0.0))]
    frame = match_frames(logs, labels)[0]
    assert [] == frame.matches
    assert 1 == len(frame.misses)


def test_resumed_trajectory_is_a_fragmentation():
    labels, logs = [], []
    for k, t in enumerate(_times(3)):
        labels.append(scenes.label_frame(t, scenes.label(1, t, 0.0, 0.0)))
        records = [] if k == 1 else [scenes.record(t, 1, 0.0, 0.0)]
        logs.append(scenes.frame_log(t, *records))
    frames = match_frames(logs, labels)
    assert [0, 0, 1] == [f.fragmentations for f in frames]
    assert 0 == sum(f.switches for f in frames)


def test_unconfirmed_records_are_ignored():
    t = 0.0
    labels = [scenes.label_frame(t, scenes.label(1, t, 0.0, 0.0))]
    logs = [scenes.frame_log(t, scenes.record(t, 1, 0.0, 0.0, confirmed=False))]
    frame = match_frames(logs, labels)[0]
    assert [] == frame.false_positives
    assert 1 == len(frame.misses)
    assert 1 == len(match_frames(logs, labels, confirmed_only=False)[0].matches)


def test_labels_without_a_log_are_missed():
    logs, labels = _perfect(3)
    frames = match_frames(logs[:2], labels)
    assert 2 == len(frames[2].misses)


def test_velocity_error_examples():
    t0, t1 = _times(2)
    labels = [scenes.label_frame(t0, scenes.label(1, t0, 0.0, 0.0, vx=1.0))]
    logs = [scenes.frame_log(t0, scenes.record(t0, 1, 0.0, 0.0))]
    assert 1.0 == motve(match_frames(logs, labels))

    labels.append(scenes.label_frame(t1, scenes.label(1, t1, 0.0, 0.0, vx=3.0)))
    logs.append(scenes.frame_log(t1, scenes.record(t1, 1, 0.0, 0.0)))
    assert 2.0 == motve(match_frames(logs, labels))


def test_velocity_outlier_fraction():
    labels, logs = [], []
    for k, t in enumerate(_times(4)):
        vx = 1.2 if k == 0 else 0.5
        labels.append(scenes.label_frame(t, scenes.label(1, t, 0.0, 0.0, vx=vx)))
        logs.append(scenes.frame_log(t, scenes.record(t, 1, 0.0, 0.0)))
    frames = match_frames(logs, labels)
    assert 0.25 == motvo(frames)
    assert 0.25 == motvo(frames, protocol.pedestrian)
    assert motvo(frames, protocol.bicyclist) is None
    assert motve(frames, protocol.bicyclist) is None


def test_error_equal_to_the_threshold_is_not_an_outlier():
    t = 0.0
    labels = [scenes.label_frame(t, scenes.label(1, t, 0.0, 0.0, vx=1.0))]
    logs = [scenes.frame_log(t, scenes.record(t, 1, 0.0, 0.0))]
    assert 0.0 == motvo(match_frames(logs, labels))


def test_single_miss_in_ten_frames():
    labels, logs = [], []
    for k, t in enumerate(_times(10)):
        labels.append(scenes.label_frame(t, scenes.label(1, t, 0.0, 0.0)))
        logs.append(scenes.frame_log(t, *([scenes.record(t, 1, 0.0, 0.0)] if k < 9 else [])))
    mota, _, mt, ml, idsw, frag = clear_mot(match_frames(logs, labels))
    assert 0.9 == pytest.approx(mota)
    assert (1.0, 0.0, 0, 0) == (mt, ml, idsw, frag)


def test_hand_computed_scene():
    logs, labels = _hand_scene()
    result = evaluate(logs, labels)
    assert (2, 3, 1, 0, 30) == (result.fp, result.fn, result.idsw, result.frag, result.gt)
    assert 0.8 == pytest.approx(result.mota)
    assert 2 / 3 == pytest.approx(result.mt)
    assert 0.0 == result.ml
    assert 0.0 == result.motp


def test_empty_ground_truth():
    with pytest.raises(EmptyGroundTruthError):
        clear_mot([])
    t = 0.0
    frames = match_frames([scenes.frame_log(t, scenes.record(t, 1, 0.0, 0.0))], [scenes.label_frame(t)])
    with pytest.raises(EmptyGroundTruthError):
        clear_mot(frames)


def _oracle(distances, radius):
    """Maximum number of in-radius matches, then minimum total distance, by enumeration."""
    n, m = distances.shape
    best = (0, 0.0)
    for k in range(min(n, m), 0, -1):
        costs = [
            sum(distances[i, j] for i, j in zip(rows, cols))
            for rows in itertools.combinations(range(n), k)
            for cols in itertools.permutations(range(m), k)
            if all(distances[i, j] < radius for i, j in zip(rows, cols))
        ]
        if costs:
            return (k, min(costs))
    return best


def test_matching_agrees_with_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, m = rng.integers(1, 5, size=2)
        t = 0.0
        points = rng.uniform(0.0, 4.0, size=(n + m, 2))
        labels = [scenes.label_frame(t, *(scenes.label(i + 1, t, *points[i]) for i in range(n)))]
        logs = [scenes.frame_log(t, *(scenes.record(t, j + 1, *points[n + j]) for j in range(m)))]
        frame = match_frames(logs, labels)[0]
        distances = np.hypot(*(points[:n, None, :] - points[None, n:, :]).transpose(2, 0, 1))
        count, cost = _oracle(distances, protocol.match_radius)
        assert count == len(frame.matches)
        assert cost == pytest.approx(sum(c.distance for c in frame.matches))


OUTLIER_THRESHOLDS = {protocol.pedestrian: 1.0, protocol.bicyclist: 1.5}


def _best_pairs(distances, radius):
    """In-radius pairs with the most matches, then the least total distance, by enumeration."""
    n, m = distances.shape
    for k in range(min(n, m), 0, -1):
        candidates = [
            list(zip(rows, cols))
            for rows in itertools.combinations(range(n), k)
            for cols in itertools.permutations(range(m), k)
            if all(distances[i, j] < radius for i, j in zip(rows, cols))
        ]
        if candidates:
            return min(candidates, key=lambda pairs: sum(distances[i, j] for i, j in pairs))
    return []


def _replay(logs, label_frames, radius=protocol.match_radius):
    """(MOTA, MOTP, IDSW, MOTVE, MOTVO) recomputed frame by frame with enumerated matching."""
    fp = fn = gt = idsw = 0
    distance_sum = 0.0
    errors = {}
    previous, last_track = {}, {}
    for log, label_frame in zip(logs, label_frames):
        records, truth = log.records, label_frame.labels
        distances = np.array(
            [[math.hypot(l.box.cx - r.state.x, l.box.cy - r.state.y) for r in records] for l in truth]
        ).reshape(len(truth), len(records))
        pairs = [
            (i, j)
            for i, l in enumerate(truth)
            for j, r in enumerate(records)
            if r.track_id == previous.get(l.track_id) and distances[i, j] < radius
        ]
        rest_i = [i for i in range(len(truth)) if i not in {p[0] for p in pairs}]
        rest_j = [j for j in range(len(records)) if j not in {p[1] for p in pairs}]
        sub = np.array([[distances[i, j] for j in rest_j] for i in rest_i]).reshape(len(rest_i), len(rest_j))
        pairs += [(rest_i[a], rest_j[b]) for a, b in _best_pairs(sub, radius)]

        current = {}
        for i, j in pairs:
            l, r = truth[i], records[j]
            if last_track.get(l.track_id, r.track_id) != r.track_id:
                idsw += 1
            last_track[l.track_id] = current[l.track_id] = r.track_id
            distance_sum += distances[i, j]
            errors.setdefault(l.category, []).append(math.hypot(l.vx - r.state.vx, l.vy - r.state.vy))
        previous = current
        gt += len(truth)
        fn += len(truth) - len(pairs)
        fp += len(records) - len(pairs)
    mota = 1.0 - (fp + fn + idsw) / gt
    motp = distance_sum / (gt - fn)
    velocity_error = {c: sum(e) / len(e) for c, e in errors.items()}
    outliers = {c: sum(1 for x in e if x > OUTLIER_THRESHOLDS[c]) / len(e) for c, e in errors.items()}
    return mota, motp, idsw, velocity_error, outliers


def _random_scene(rng, n_frames=6):
    """Up to four labels and four tracks jumping around a 4 m square, so pairings and switches vary."""
    categories = {i: (protocol.pedestrian, protocol.bicyclist)[rng.integers(2)] for i in range(1, 5)}
    labels, logs = [], []
    for t in _times(n_frames):
        truth = [
            scenes.label(i, t, *rng.uniform(0.0, 4.0, 2), *rng.normal(0.0, 1.0, 2), category=categories[i])
            for i in range(1, 5)
            if i == 1 or rng.random() < 0.8
        ]
        records = [
            scenes.record(t, j, *rng.uniform(0.0, 4.0, 2), *rng.normal(0.0, 1.0, 2))
            for j in range(1, 5)
            if rng.random() < 0.8
        ]
        labels.append(scenes.label_frame(t, *truth))
        logs.append(scenes.frame_log(t, *records))
    return logs, labels


def test_sequence_metrics_agree_with_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(20):
        logs, labels = _random_scene(rng)
        mota, motp, idsw, velocity_error, outliers = _replay(logs, labels)
        result = evaluate(logs, labels)
        assert mota == pytest.approx(result.mota)
        assert motp == pytest.approx(result.motp)
        assert idsw == result.idsw
        assert velocity_error == pytest.approx(result.motve)
        assert outliers == pytest.approx(result.motvo)


def test_metrics_do_not_depend_on_track_ids():
    logs, labels = _hand_scene()
    renamed = [
        scenes.frame_log(
            log.time,
            *(scenes.record(r.time, 100 - r.track_id, r.state.x, r.state.y) for r in log.records),
        )
        for log in logs
    ]
    assert evaluate(logs, labels).row() == evaluate(renamed, labels).row()


def test_false_positive_lowers_mota_but_not_velocity_error():
    logs, labels = _perfect()
    cluttered = [
        scenes.frame_log(log.time, *log.records, scenes.record(log.time, 99, 40.0, 40.0, vx=7.0))
        for log in logs
    ]
    clean, noisy = evaluate(logs, labels), evaluate(cluttered, labels)
    assert noisy.mota < clean.mota
    assert clean.motve == noisy.motve


def test_pooled_sequences_keep_labels_apart():
    logs, labels = _perfect(3)
    # the same label ids in a second sequence are new trajectories
    other_logs = []
    for log in logs:
        first = log.records[0]
        other_logs.append(scenes.frame_log(log.time, scenes.record(first.time, 50, first.state.x, 0.0, vx=1.0)))
    result = evaluate_sequences([(logs, labels), (other_logs, labels)])
    assert 0 == result.idsw
    assert 12 == result.gt
    assert 3 == result.fn


def test_report_outputs(tmp_path):
    logs, labels = _perfect()
    result = report(match_frames(logs, labels))
    assert len(MetricReport.columns) == len(result.row())
    header, values = result.dumps("mahalanobis").splitlines()
    assert "MOTA" == header.split()[0]
    assert ["mahalanobis", "1.0000"] == values.split()[:2]
    assert "-" == values.split()[3]

    path = tmp_path / "report.json"
    result.dump_json(path)
    loaded = json.loads(path.read_text())
    assert 1.0 == loaded["mota"]
    assert {protocol.pedestrian: 0.0} == loaded["motve"]
    assert not math.isnan(loaded["motp"])
