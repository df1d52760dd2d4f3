# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.
import numpy as np
import pytest
import scenes

import vrutrack
from vrutrack import protocol
from vrutrack.core import Detection, Label
from vrutrack.parser import (
    FrameHeader,
    ParseError,
    dumps,
    group_examples,
    group_frames,
    group_labels,
    group_tracks,
    parse,
    parse_line,
    read_log,
    write_log,
)
from vrutrack.sim import ScenarioConfig, generate_scenario
from vrutrack.tracker import TrackRecord
from vrutrack.training import TrainingExample


def test_parse_simple_log():
    frame, detection, label = parse(scenes.SIMPLE_LOG)
    assert FrameHeader(0.1, protocol.lidar) == frame
    assert isinstance(detection, Detection)
    assert "l1-3" == detection.id
    assert (2.5, -1.0) == (detection.box.cx, detection.box.cy)
    assert 0.9 == detection.confidence
    assert not detection.is_null
    assert isinstance(label, Label)
    assert (3, 1.2, 0.0) == (label.track_id, label.vx, label.vy)


def test_dumps_reproduces_canonical_logs():
    assert scenes.SIMPLE_LOG == dumps(parse(scenes.SIMPLE_LOG))
    assert scenes.TRACK_LOG == dumps(parse(scenes.TRACK_LOG))
    assert scenes.TWO_FRAME_LOG == dumps(parse(scenes.TWO_FRAME_LOG))


def test_track_record_fields():
    (record,) = parse(scenes.TRACK_LOG)
    assert isinstance(record, TrackRecord)
    assert (0.2, 7, protocol.pedestrian) == (record.time, record.track_id, record.category)
    assert (1.0, 2.0, 0.5, 0.0) == (record.state.x, record.state.y, record.state.vx, record.state.vy)
    assert record.confirmed


def test_write_and_read_log(tmp_path):
    path = tmp_path / "scene.log"
    write_log(path, parse(scenes.TWO_FRAME_LOG))
    assert scenes.TWO_FRAME_LOG == path.read_text()
    assert parse(scenes.TWO_FRAME_LOG) == list(read_log(path, strict=True))


def test_frames_and_frame_logs_are_expanded_on_write(tmp_path):
    frames = group_frames(parse(scenes.TWO_FRAME_LOG))
    assert scenes.TWO_FRAME_LOG == dumps(frames)
    logs = group_tracks(parse(scenes.TRACK_LOG))
    assert scenes.TRACK_LOG == dumps(logs)


def test_empty_log(tmp_path):
    path = tmp_path / "empty.log"
    path.write_text("")
    assert [] == list(read_log(path))
    assert [] == parse("")
    with pytest.raises(ParseError):
        parse("", strict=True)


def test_blank_lines_are_skipped():
    assert 3 == len(parse(scenes.SIMPLE_LOG.replace("\n", "\n\n")))


def test_non_finite_number_reports_the_line():
    with pytest.raises(ParseError) as e:
        parse(scenes.NAN_LOG)
    assert 3 == e.value.lineno
    assert "cx" == e.value.field


def test_missing_field():
    with pytest.raises(ParseError) as e:
        parse(scenes.SHORT_RECORD_LOG)
    assert "height" == e.value.field


def test_unknown_tag_is_skipped_unless_strict():
    assert [FrameHeader(0.1, protocol.lidar)] == parse(scenes.UNKNOWN_TAG_LOG)
    with pytest.raises(ParseError) as e:
        parse(scenes.UNKNOWN_TAG_LOG, strict=True)
    assert 3 == e.value.lineno


def test_newer_log_version_is_rejected():
    with pytest.raises(ParseError) as e:
        parse(scenes.FUTURE_VERSION_LOG)
    assert "version" == e.value.field
    assert "unsupported log version 9" in str(e.value)


def test_unknown_class():
    with pytest.raises(ParseError) as e:
        parse(scenes.BAD_CLASS_LOG)
    assert "class" == e.value.field


def test_strict_parse_needs_the_header(tmp_path):
    content = scenes.SIMPLE_LOG.split("\n", 1)[1]
    assert 3 == len(parse(content))
    with pytest.raises(ParseError):
        parse(content, strict=True)
    path = tmp_path / "headless.log"
    path.write_text(content)
    with pytest.raises(ParseError):
        list(read_log(path, strict=True))


def test_line_without_a_tag():
    with pytest.raises(ParseError):
        parse_line(1, "l1-3,0.1,2.5")


def test_invalid_values_become_parse_errors():
    line = "#VRU-DETECTION:l1-3,0.1,2.5,-1,0.6,0.6,1.7,0,pedestrian,1.5,lidar,0"
    with pytest.raises(ParseError) as e:
        parse_line(4, line)
    assert 4 == e.value.lineno
    assert line == e.value.line


def test_undecodable_bytes(tmp_path):
    path = tmp_path / "broken.log"
    path.write_bytes(b"#VRULOG\n#VRU-FRAME:0.1,lid\xffar\n")
    with pytest.raises(ParseError) as e:
        list(read_log(path))
    assert 2 == e.value.lineno


def test_mutated_logs_parse_or_fail_cleanly():
    rng = np.random.default_rng(0)
    content = scenes.TWO_FRAME_LOG
    for _ in range(200):
        position = int(rng.integers(len(content)))
        replacement = chr(int(rng.integers(32, 127)))
        mutated = content[:position] + replacement + content[position + 1 :]
        try:
            parse(mutated)
        except ParseError:
            pass


def test_parse_error_message():
    error = ParseError(7, "#VRU-LABEL:x", "track_id", "not an integer")
    assert "Syntax error in log on line 7 (field track_id): #VRU-LABEL:x [not an integer]" == str(error)


def test_group_frames_keeps_empty_frames():
    frames = group_frames(parse(scenes.TWO_FRAME_LOG))
    assert [(0.0, protocol.lidar), (0.05, protocol.camera), (0.1, protocol.lidar)] == [
        (f.time, f.sensor) for f in frames
    ]
    assert [["a", "b"], [], ["c"]] == [[d.id for d in f.detections] for f in frames]
    assert protocol.bicyclist == frames[0].detections[1].category


def test_group_frames_without_headers():
    records = [r for r in parse(scenes.TWO_FRAME_LOG) if not isinstance(r, FrameHeader)]
    frames = group_frames(records)
    assert [0.0, 0.1] == [f.time for f in frames]


def test_group_labels_and_tracks():
    labels = group_labels(parse(scenes.SIMPLE_LOG))
    assert [0.1] == [f.time for f in labels]
    assert [3] == [l.track_id for l in labels[0].labels]
    logs = group_tracks(parse(scenes.TRACK_LOG))
    assert [[7]] == [log.track_ids() for log in logs]


def test_training_examples_round_trip():
    features = np.linspace(-1.0, 1.0, protocol.feature_dim)
    example = TrainingExample(
        sequence_id=2,
        frame_index=14,
        track_key=5,
        target_assoc=True,
        target_score=0.25,
        is_null=False,
        target_state=(1.0, 2.0, 0.5, -0.5),
        anchor=(1.25, 2.0),
        features=features,
    )
    dataset = group_examples(parse(dumps([example])))
    assert 1 == len(dataset)
    (loaded,) = dataset
    assert (2, 14, 5, True, 0.25) == (
        loaded.sequence_id,
        loaded.frame_index,
        loaded.track_key,
        loaded.target_assoc,
        loaded.target_score,
    )
    np.testing.assert_allclose(features, loaded.features, rtol=1e-8)
    np.testing.assert_allclose([-0.25, 0.0, 0.5, -0.5], loaded.state_target)


def test_package_level_load_and_dump(tmp_path):
    records = vrutrack.loads(scenes.SIMPLE_LOG)
    path = tmp_path / "simple.log"
    vrutrack.dump(records, path)
    assert scenes.SIMPLE_LOG == path.read_text()
    assert records == vrutrack.load(path)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_simulated_scenarios_survive_a_dump_and_parse(seed):
    config = ScenarioConfig(
        n_pedestrians=4, n_bicyclists=2, duration=1.0, sensors=(protocol.lidar, protocol.camera), seed=seed
    )
    scenario = generate_scenario(config)
    items = []
    for frame, labels in zip(scenario.frames, scenario.label_frames):
        items.extend((frame, labels))
    records = parse(dumps(items), strict=True)
    assert scenario.frames == group_frames(records)
    assert scenario.label_records() == [r for r in records if isinstance(r, Label)]
    assert dumps(items) == dumps(records)
