# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

"""
Run configuration from a TOML file.

    [tracker]          TrackerConfig
    [imm]              ImmConfig
    [training]         TrainingConfig (+ w_score, w_state, learn_state)
    [scenario]         ScenarioConfig
    [sensors.lidar]    SensorModel overrides per channel
    [sensors.camera]
    [paths]            weights directory, output directory
    [bench]            latency sweep
    [density]          density sweep
    [experiment]       scenario counts and training densities

Every key is optional; unknown sections or keys are errors.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from vrutrack import protocol
from vrutrack.imm import ImmConfig
from vrutrack.sim import ScenarioConfig, SensorModel
from vrutrack.tracker import TrackerConfig
from vrutrack.training import LossWeights, TrainingConfig


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    weights_dir: str = "weights"
    out: str = "out"

    def weights(self, mode, learn_state=True):
        suffix = "" if learn_state else "-assoc"
        return f"{self.weights_dir}/{mode}{suffix}.weights"


@dataclass
class BenchConfig:
    actor_counts: tuple = (10, 50, 100, 200, 500)
    frames: int = 50
    warmup: int = 5
    mode: str = protocol.mode_learned_lstm
    budget_ms: float = 5.0
    budget_actors: int = 100
    budget_max_ms: float = 5.0
    budget_max_actors: int = 500
    min_r2: float = 0.95
    pin_cpu: bool = True

    def __post_init__(self):
        if self.frames <= self.warmup:
            raise ValueError("bench frames must exceed warmup frames")
        if self.budget_ms <= 0 or self.budget_max_ms <= 0:
            raise ValueError("bench budgets must be positive")
        if not 0 < self.budget_actors < self.budget_max_actors:
            raise ValueError("bench budget_max_actors must exceed budget_actors")
        if self.budget_max_ms < self.budget_ms:
            raise ValueError("bench budget_max_ms must not be below budget_ms")
        if self.mode not in protocol.association_modes:
            raise ValueError(f"unknown association mode {self.mode!r}")


@dataclass
class DensityConfig:
    densities: tuple = (10, 25, 50, 100, 150)
    scenarios: int = 3
    mode: str = protocol.mode_learned_lstm

    def __post_init__(self):
        if not self.densities or any(d < 0 for d in self.densities):
            raise ValueError("densities must be non-negative pedestrian counts")
        if self.mode not in protocol.learned_modes:
            raise ValueError("the density sweep compares a learned mode against mahalanobis")


@dataclass
class ExperimentConfig:
    n_scenarios: int = 20
    train_scenarios: int = 50
    train_densities: tuple = (5, 10, 25, 50)
    train_sensors: tuple = (protocol.lidar, protocol.camera)

    def __post_init__(self):
        if self.n_scenarios < 1 or self.train_scenarios < 1:
            raise ValueError("scenario counts must be positive")


@dataclass
class RunConfig:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    density: DensityConfig = field(default_factory=DensityConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    @property
    def seed(self):
        return self.scenario.seed

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self):
        return config_hash(self.to_dict())


def config_hash(data):
    """SHA-256 of the sorted-key JSON rendering of `data`."""
    text = json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _coerce(section, key, value, default):
    where = f"[{section}] {key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be an array")
        return tuple(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where} must be a table")
        unknown = set(value) - set(default)
        if unknown:
            raise ConfigError(f"{where} has unknown entries {sorted(unknown)}")
        return {**default, **{k: float(v) for k, v in value.items()}}
    return value


def _build(cls, table, section, skip=(), **fixed):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    defaults = cls(**fixed)
    names = {f.name for f in dataclasses.fields(cls)} - set(skip) - set(fixed)
    kwargs = {}
    for key, value in table.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        kwargs[key] = _coerce(section, key, value, getattr(defaults, key))
    try:
        return cls(**fixed, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


_SENSOR_FACTORIES = {protocol.lidar: SensorModel.lidar, protocol.camera: SensorModel.camera}
_LOSS_KEYS = {f.name for f in dataclasses.fields(LossWeights)}


def _sensor_models(tables):
    if not isinstance(tables, dict):
        raise ConfigError("[sensors] must contain channel tables")
    models = {}
    for channel, factory in _SENSOR_FACTORIES.items():
        table = tables.get(channel, {})
        default = factory()
        overrides = {}
        if not isinstance(table, dict):
            raise ConfigError(f"[sensors.{channel}] must be a table")
        for key, value in table.items():
            if key == "channel" or not hasattr(default, key):
                raise ConfigError(f"unknown key {key!r} in [sensors.{channel}]")
            overrides[key] = _coerce(f"sensors.{channel}", key, value, getattr(default, key))
        try:
            models[channel] = factory(**overrides)
        except ValueError as exc:
            raise ConfigError(f"[sensors.{channel}] {exc}") from exc
    unknown = set(tables) - set(_SENSOR_FACTORIES)
    if unknown:
        raise ConfigError(f"unknown sensor channels {sorted(unknown)}")
    return models


SECTIONS = ("tracker", "imm", "training", "scenario", "sensors", "paths", "bench", "density", "experiment")


def from_dict(data):
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")

    imm = _build(ImmConfig, data.get("imm", {}), "imm")
    tracker = _build(TrackerConfig, data.get("tracker", {}), "tracker", imm=imm)

    training_table = dict(data.get("training", {}))
    loss_table = {k: training_table.pop(k) for k in list(training_table) if k in _LOSS_KEYS}
    weights = _build(LossWeights, loss_table, "training")
    training = _build(TrainingConfig, training_table, "training", weights=weights)

    models = _sensor_models(data.get("sensors", {}))
    scenario = _build(ScenarioConfig, data.get("scenario", {}), "scenario", sensor_models=models)

    return RunConfig(
        tracker=tracker,
        training=training,
        scenario=scenario,
        paths=_build(PathsConfig, data.get("paths", {}), "paths"),
        bench=_build(BenchConfig, data.get("bench", {}), "bench"),
        density=_build(DensityConfig, data.get("density", {}), "density"),
        experiment=_build(ExperimentConfig, data.get("experiment", {}), "experiment"),
    )


def loads(text):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return from_dict(data)


def load_config(path=None):
    """Defaults when `path` is None."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fileobj:
            data = tomllib.load(fileobj)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return from_dict(data)
