# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

"""
Line-delimited text logs of detections, labels, track outputs and training
examples.

    #VRULOG
    #VRU-VERSION:1
    #VRU-FRAME:0.1,lidar
    #VRU-DETECTION:l1-3,0.1,2.5,-1,0.6,0.6,1.7,0,pedestrian,0.9,lidar,0
    #VRU-LABEL:3,0.1,2.5,-1,0.6,0.6,1.7,0,1.2,0,pedestrian

Each record is one tag followed by comma-separated values in the field
order of `protocol.*_fields`. Unknown tags are skipped unless `strict`;
values past the known fields are ignored.
"""

from dataclasses import dataclass

import numpy as np

from vrutrack import protocol, validation_rules
from vrutrack.core import BevBox, Detection, Frame, Label, LabelFrame, StateEstimate
from vrutrack.mixins import RecordMixin
from vrutrack.tracker import FrameLog, TrackRecord
from vrutrack.training import Dataset, TrainingExample


class ParseError(Exception):
    def __init__(self, lineno, line, field=None, reason=None):
        self.lineno = lineno
        self.line = line
        self.field = field
        self.reason = reason

    def __str__(self):
        where = f" (field {self.field})" if self.field else ""
        text = "Syntax error in log on line %d%s: %s" % (self.lineno, where, self.line)
        if self.reason:
            text += f" [{self.reason}]"
        return text


@dataclass(frozen=True)
class FrameHeader(RecordMixin):
    """Opens a sensor frame; the detections that follow belong to it."""

    tag = protocol.ext_vru_frame

    time: float
    sensor: str

    def record_values(self):
        return (self.time, self.sensor)


def _box(v):
    return BevBox(
        float(v["cx"]),
        float(v["cy"]),
        float(v["length"]),
        float(v["width"]),
        float(v["height"]),
        float(v["heading"]),
    )


def _parse_frame(v):
    return FrameHeader(float(v["time"]), v["sensor"])


def _parse_detection(v):
    return Detection(
        id=v["id"],
        time=float(v["time"]),
        box=_box(v),
        category=v["class"],
        confidence=float(v["confidence"]),
        sensor=v["sensor"],
        is_null=v["is_null"] == "1",
    )


def _parse_label(v):
    return Label(
        track_id=int(v["track_id"]),
        time=float(v["time"]),
        box=_box(v),
        vx=float(v["vx"]),
        vy=float(v["vy"]),
        category=v["class"],
    )


def _parse_track(v):
    state = StateEstimate(
        *(float(v[name]) for name in ("x", "y", "vx", "vy", "sigma_x", "sigma_y", "sigma_vx", "sigma_vy"))
    )
    return TrackRecord(
        time=float(v["time"]),
        track_id=int(v["track_id"]),
        category=v["class"],
        state=state,
        box=_box(v),
        confirmed=v["confirmed"] == "1",
    )


def _parse_example(v):
    return TrainingExample(
        sequence_id=int(v["sequence_id"]),
        frame_index=int(v["frame_index"]),
        track_key=int(v["track_key"]),
        target_assoc=v["target_assoc"] == "1",
        target_score=float(v["target_score"]),
        is_null=v["is_null"] == "1",
        target_state=tuple(float(v[k]) for k in ("target_x", "target_y", "target_vx", "target_vy")),
        anchor=(float(v["anchor_x"]), float(v["anchor_y"])),
        features=np.array([float(v[f"f{i}"]) for i in range(protocol.feature_dim)]),
    )


DISPATCH = {
    protocol.ext_vru_frame: _parse_frame,
    protocol.ext_vru_detection: _parse_detection,
    protocol.ext_vru_label: _parse_label,
    protocol.ext_vru_track: _parse_track,
    protocol.ext_vru_example: _parse_example,
}


def _parse_version(lineno, line):
    _, _, value = line.partition(":")
    try:
        version = int(value)
    except ValueError:
        raise ParseError(lineno, line, "version") from None
    if version > protocol.log_version:
        raise ParseError(lineno, line, "version", f"unsupported log version {version}")


def parse_line(lineno, line, strict=False):
    """Returns the record on `line`, or None for lines carrying no record."""
    line = line.strip()
    if not line:
        return None
    if not line.startswith("#"):
        raise ParseError(lineno, line, reason="records start with a tag")

    tag = line.split(":", 1)[0]
    handler = DISPATCH.get(tag)
    if handler is None:
        if tag == protocol.ext_vrulog:
            return None
        if tag == protocol.ext_vru_version:
            _parse_version(lineno, line)
            return None
        # In strict mode, unrecognized tags are illegal
        if strict:
            raise ParseError(lineno, line, reason="unknown tag")
        return None

    _, raw = validation_rules.split_record(line)
    values = validation_rules.record_values(tag, raw)
    errors = validation_rules.check_record(lineno, line, tag, values)
    if errors:
        raise ParseError(lineno, line, errors[0].field, errors[0].description)
    try:
        return handler(values)
    except (ValueError, TypeError) as exc:
        raise ParseError(lineno, line, reason=str(exc)) from exc


def iter_lines(lines, strict=False):
    for lineno, line in enumerate(lines, 1):
        record = parse_line(lineno, line, strict)
        if record is not None:
            yield record


def parse(content, strict=False):
    """All records in `content`."""
    lines = string_to_lines(content)
    if strict:
        if not lines or lines[0].strip() != protocol.ext_vrulog:
            raise ParseError(1, lines[0] if lines else "", reason=f"missing {protocol.ext_vrulog} header")
        found_errors = validation_rules.validate(lines)
        if found_errors:
            first = found_errors[0]
            raise ParseError(first.line_number, first.line, first.field, first.description)
    return list(iter_lines(lines, strict))


def read_log(path, strict=False):
    """
    Streams the records of the log at `path`. Lines are decoded one at a
    time, so undecodable bytes surface as a ParseError on their line.
    """
    with open(path, "rb") as fileobj:
        for lineno, raw in enumerate(fileobj, 1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(lineno, repr(raw), reason="invalid utf-8") from exc
            if strict and lineno == 1 and line.strip() != protocol.ext_vrulog:
                raise ParseError(1, line.strip(), reason=f"missing {protocol.ext_vrulog} header")
            record = parse_line(lineno, line, strict)
            if record is not None:
                yield record


def _expand(item):
    if isinstance(item, Frame):
        yield FrameHeader(item.time, item.sensor)
        yield from item.detections
    elif isinstance(item, LabelFrame):
        yield from item.labels
    elif isinstance(item, FrameLog):
        yield from item.records
    else:
        yield item


def record_lines(records):
    yield protocol.ext_vrulog
    yield f"{protocol.ext_vru_version}:{protocol.log_version}"
    for item in records:
        for record in _expand(item):
            yield record.dumps()


def dumps(records):
    """Log text for `records`; frames, label frames and frame logs are expanded."""
    return "\n".join(record_lines(records)) + "\n"


def write_log(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fileobj:
        for line in record_lines(records):
            fileobj.write(line)
            fileobj.write("\n")


def string_to_lines(string):
    return string.strip().splitlines()


def group_frames(records):
    """
    Detections grouped into Frames. A FrameHeader opens a frame; detections
    that follow without one are grouped by (time, sensor).
    """
    frames = []
    current = None
    for record in records:
        if isinstance(record, FrameHeader):
            current = Frame(record.time, record.sensor)
            frames.append(current)
        elif isinstance(record, Detection):
            if current is None or current.time != record.time or current.sensor != record.sensor:
                current = Frame(record.time, record.sensor)
                frames.append(current)
            current.detections.append(record)
    return frames


def group_labels(records):
    frames = {}
    for record in records:
        if isinstance(record, Label):
            frames.setdefault(record.time, LabelFrame(record.time)).labels.append(record)
    return [frames[t] for t in sorted(frames)]


def group_tracks(records):
    logs = {}
    for record in records:
        if isinstance(record, TrackRecord):
            logs.setdefault(record.time, FrameLog(record.time)).records.append(record)
    return [logs[t] for t in sorted(logs)]


def group_examples(records):
    return Dataset(r for r in records if isinstance(r, TrainingExample))
