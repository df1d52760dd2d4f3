# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

from vrutrack.association import Assignment, CandidatePair, greedy_assign, hungarian_assign
from vrutrack.core import BevBox, Detection, Frame, Label, LabelFrame, StateEstimate
from vrutrack.imm import ImmConfig, ImmState, MotionModel, imm_predict, imm_update
from vrutrack.metrics import MetricReport, evaluate, evaluate_sequences
from vrutrack.network import (
    LstmNetwork,
    MlpNetwork,
    ModelOutput,
    TrackMemory,
    build_network,
    load_weights,
    save_weights,
)
from vrutrack.parser import ParseError, dumps, parse, read_log, write_log
from vrutrack.sim import ScenarioConfig, SensorModel, generate_scenario
from vrutrack.tracker import FrameLog, Tracker, TrackerConfig, TrackRecord, run_sequence
from vrutrack.training import Dataset, TrainingConfig, build_dataset, train

__all__ = (
    "Assignment",
    "BevBox",
    "CandidatePair",
    "Dataset",
    "Detection",
    "Frame",
    "FrameLog",
    "ImmConfig",
    "ImmState",
    "Label",
    "LabelFrame",
    "LstmNetwork",
    "MetricReport",
    "MlpNetwork",
    "ModelOutput",
    "MotionModel",
    "ParseError",
    "ScenarioConfig",
    "SensorModel",
    "StateEstimate",
    "TrackMemory",
    "TrackRecord",
    "Tracker",
    "TrackerConfig",
    "TrainingConfig",
    "build_dataset",
    "build_network",
    "dump",
    "dumps",
    "evaluate",
    "evaluate_sequences",
    "generate_scenario",
    "greedy_assign",
    "hungarian_assign",
    "imm_predict",
    "imm_update",
    "load",
    "load_weights",
    "loads",
    "parse",
    "run_sequence",
    "save_weights",
    "train",
)


def loads(content, strict=False):
    """
    Given log text, returns its records. Raises ParseError on invalid
    content.
    """
    return parse(content, strict)


def load(path, strict=False):
    """Reads every record of the log at `path`."""
    return list(read_log(path, strict))


def dump(records, path):
    write_log(path, records)
