# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

"""
Command-line entry points.

    vrutrack simulate   write scenario logs
    vrutrack train      build the synthetic dataset and train a learned mode
    vrutrack eval       track and score one association mode
    vrutrack compare    every mode on identical scenarios, per sensor set
    vrutrack bench      per-frame latency against the number of actors
    vrutrack density    learned vs mahalanobis across crowd densities
    vrutrack ablate     association-output, state-learning and state-reporting variants

Exit status: 0 ok, 1 budget or acceptance violation, 2 usage, config or input error.
"""

import argparse
import csv
import dataclasses
import json
import logging
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.stats import linregress

from vrutrack import protocol
from vrutrack.config import ConfigError, load_config
from vrutrack.metrics import MetricReport, match_frames, motvo, report
from vrutrack.network import WeightFileError, build_network, load_weights
from vrutrack.parser import ParseError, write_log
from vrutrack.sim import generate_scenario, scenario_configs
from vrutrack.tracker import Tracker
from vrutrack.training import build_dataset, train

logger = logging.getLogger(__name__)

SENSOR_SETS = {
    "lidar": (protocol.lidar,),
    "lidar+camera": (protocol.lidar, protocol.camera),
}


class MissingWeightsError(FileNotFoundError):
    def __init__(self, path, mode, learn_state=True):
        self.path = path
        self.mode = mode
        self.learn_state = learn_state

    def __str__(self):
        command = f"vrutrack train --mode {self.mode}"
        if not self.learn_state:
            command += " --no-state"
        return f"no weights at {self.path}; run `{command}` first"


class BudgetError(RuntimeError):
    pass


class TrendError(RuntimeError):
    pass


def git_describe():
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            check=True,
        )
    except (OSError, subprocess.CalledProcessError):
        return "unknown"
    return result.stdout.strip() or "unknown"


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows, run):
    """CSV with a header row plus a `<name>.meta.json` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fileobj:
        writer = csv.writer(fileobj)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    meta = {"git_describe": git_describe(), "seed": run.seed, "config_hash": run.hash()}
    with open(path.with_suffix(".meta.json"), "w") as fileobj:
        json.dump(meta, fileobj, indent=2, sort_keys=True)
        fileobj.write("\n")
    logger.info("wrote %s", path)
    return path


# Helpers shared by the sub-commands


def _network(run, mode, learn_state=True, required=True):
    if mode not in protocol.learned_modes:
        return None
    path = run.paths.weights(mode, learn_state)
    if not os.path.exists(path):
        if required:
            raise MissingWeightsError(path, mode, learn_state)
        return None
    return load_weights(path, mode)


def _tracker_config(run, mode, **overrides):
    return dataclasses.replace(run.tracker, mode=mode, **overrides)


def _track_scenario(job):
    """Worker: (index, scenario config, tracker config, network) -> frame matches."""
    index, scenario_config, tracker_config, network = job
    scenario = generate_scenario(scenario_config)
    logs = Tracker(tracker_config, network).run_sequence(scenario.frames)
    return match_frames(logs, scenario.label_frames, sequence=index)


def _map(function, jobs, workers):
    if workers <= 1:
        return [function(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(function, jobs))


def run_method(scenarios, tracker_config, network, workers=1):
    """Pooled metric report (and raw frame matches) over scenario configs."""
    jobs = [(i, s, tracker_config, network) for i, s in enumerate(scenarios)]
    frames = [f for matches in _map(_track_scenario, jobs, workers) for f in matches]
    return report(frames), frames


def _scenarios(run, sensors, count=None):
    base = dataclasses.replace(run.scenario, sensors=sensors)
    return scenario_configs(base, count or run.experiment.n_scenarios)


def _sensors(args, run):
    if args.sensors:
        return SENSOR_SETS[args.sensors]
    return run.scenario.sensors


def _out(args, run):
    out = Path(args.out or run.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# Sub-commands


def cmd_simulate(args, run):
    out = _out(args, run)
    sensors = _sensors(args, run)
    rows = []
    for scenario_config in _scenarios(run, sensors, args.count):
        scenario = generate_scenario(scenario_config)
        items = []
        for frame, labels in zip(scenario.frames, scenario.label_frames):
            items.extend((frame, labels))
        path = out / f"scenario-{scenario_config.seed:04d}.log"
        write_log(path, items)
        n_detections = sum(len(f.detections) for f in scenario.frames)
        rows.append((scenario_config.seed, scenario.n_actors, len(scenario.frames), n_detections, path.name))
    write_csv(out / "simulate.csv", ("seed", "actors", "frames", "detections", "log"), rows, run)
    return 0


def _training_scenarios(run):
    experiment = run.experiment
    base = dataclasses.replace(run.scenario, sensors=experiment.train_sensors)
    configs = []
    # training seeds sit far above the evaluation seeds
    for i in range(experiment.train_scenarios):
        density = experiment.train_densities[i % len(experiment.train_densities)]
        configs.append(
            dataclasses.replace(base, seed=1_000_000 + run.seed + i, n_pedestrians=density)
        )
    return [generate_scenario(c) for c in configs]


def cmd_train(args, run):
    out = _out(args, run)
    modes = [args.mode] if args.mode else list(protocol.learned_modes)
    for mode in modes:
        if mode not in protocol.learned_modes:
            raise ConfigError(f"train needs a learned mode, got {mode!r}")
    training = run.training
    if args.no_state:
        training = dataclasses.replace(
            training, weights=dataclasses.replace(training.weights, learn_state=False)
        )
    classical = _tracker_config(run, protocol.mode_mahalanobis)
    dataset = build_dataset(_training_scenarios(run), classical, run.seed, training.max_negatives)
    for mode in modes:
        net = build_network(mode, seed=run.seed)
        net, history = train(dataset, net, training)
        path = Path(run.paths.weights(mode, training.weights.learn_state))
        path.parent.mkdir(parents=True, exist_ok=True)
        net.save(path)
        suffix = "" if training.weights.learn_state else "-assoc"
        history_path = out / f"train-{mode}{suffix}.csv"
        rows = [
            (r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.learning_rate)
            for r in history.records
        ]
        write_csv(history_path, ("epoch", "train_loss", "val_loss", "val_accuracy", "learning_rate"), rows, run)
        best = history.records[history.best_epoch - 1]
        print(f"{mode}: best epoch {best.epoch}, validation accuracy {best.val_accuracy:.4f} -> {path}")
    return 0


def cmd_eval(args, run):
    out = _out(args, run)
    mode = args.mode or run.tracker.mode
    sensors = _sensors(args, run)
    network = _network(run, mode)
    tracker_config = _tracker_config(run, mode)
    tracks_dir = out / "tracks"
    tracks_dir.mkdir(exist_ok=True)
    frames = []
    for index, scenario_config in enumerate(_scenarios(run, sensors, args.count)):
        scenario = generate_scenario(scenario_config)
        logs = Tracker(tracker_config, network).run_sequence(scenario.frames)
        write_log(tracks_dir / f"{mode}-{scenario_config.seed:04d}.log", logs)
        frames.extend(match_frames(logs, scenario.label_frames, sequence=index))
    result = report(frames)
    result.dump_json(out / f"eval-{mode}.json")
    write_csv(out / f"eval-{mode}.csv", ("method",) + result.columns, [(mode,) + result.row()], run)
    print(result.dumps(name=mode))
    return 0


def cmd_compare(args, run):
    out = _out(args, run)
    modes = [args.mode] if args.mode else list(protocol.association_modes)
    sensor_sets = [args.sensors] if args.sensors else list(SENSOR_SETS)
    networks = {mode: _network(run, mode) for mode in modes}
    rows, lines = [], []
    for sensor_name in sensor_sets:
        scenarios = _scenarios(run, SENSOR_SETS[sensor_name], args.count)
        for mode in modes:
            result, _ = run_method(scenarios, _tracker_config(run, mode), networks[mode], args.workers)
            rows.append((sensor_name, mode) + result.row())
            lines.append(result.dumps(name=f"{sensor_name} {mode}"))
            logger.info("compare %s %s: MOTA %.4f, IDSW %d", sensor_name, mode, result.mota, result.idsw)
    write_csv(out / "compare.csv", ("sensors", "method") + MetricReport.columns, rows, run)
    print("\n\n".join(lines))
    return 0


def _pin_cpu():
    if hasattr(os, "sched_setaffinity"):
        cpus = sorted(os.sched_getaffinity(0))
        os.sched_setaffinity(0, {cpus[0]})
        return cpus[0]
    return None


def measure_latency(tracker, frames, warmup):
    """Per-frame step latency in milliseconds, skipping `warmup` frames."""
    latencies = []
    for k, frame in enumerate(frames):
        start = time.perf_counter()
        tracker.step(frame)
        elapsed = (time.perf_counter() - start) * 1000.0
        if k >= warmup:
            latencies.append(elapsed)
    return np.array(latencies)


def budget_limit(bench, n_actors):
    """p50 limit in milliseconds for `n_actors`.

    Flat at `budget_ms` up to `budget_actors`, linear between that point and
    (`budget_max_actors`, `budget_max_ms`), proportional past it.
    """
    if n_actors <= bench.budget_actors:
        return bench.budget_ms
    if n_actors <= bench.budget_max_actors:
        span = bench.budget_max_actors - bench.budget_actors
        slope = (bench.budget_max_ms - bench.budget_ms) / span
        return bench.budget_ms + slope * (n_actors - bench.budget_actors)
    return bench.budget_max_ms * n_actors / bench.budget_max_actors


def budget_problems(bench, rows, r2):
    """Budget violations of a latency sweep; `rows` hold (actors, p50_ms, ...)."""
    problems = []
    for n, p50, *_ in rows:
        limit = budget_limit(bench, n)
        if p50 > limit:
            problems.append(f"p50 {p50:.3f} ms at {n} actors exceeds {limit:.3f} ms")
    if r2 < bench.min_r2:
        problems.append(f"latency is not linear in actor count (R^2 {r2:.4f} < {bench.min_r2})")
    return problems


def latency_sweep(run, tracker_config, network):
    """(actors, p50_ms, p99_ms, frames) per configured actor count, plus the linear fit of p50 against actors."""
    bench = run.bench
    duration = bench.frames / run.scenario.frame_rate
    rows = []
    for n in bench.actor_counts:
        scenario_config = dataclasses.replace(
            run.scenario,
            n_pedestrians=int(n),
            n_bicyclists=0,
            duration=duration,
            sensors=(protocol.lidar,),
        )
        scenario = generate_scenario(scenario_config)
        latencies = measure_latency(Tracker(tracker_config, network), scenario.frames, bench.warmup)
        p50, p99 = np.percentile(latencies, [50, 99])
        rows.append((int(n), float(p50), float(p99), len(latencies)))
        logger.info("%d actors: p50 %.3f ms, p99 %.3f ms", n, p50, p99)
    fit = linregress(np.asarray([r[0] for r in rows], dtype=float), np.asarray([r[1] for r in rows]))
    return rows, fit


def cmd_bench(args, run):
    out = _out(args, run)
    bench = run.bench
    mode = args.mode or bench.mode
    if bench.pin_cpu:
        cpu = _pin_cpu()
        if cpu is not None:
            logger.info("pinned to cpu %d", cpu)
    network = _network(run, mode, required=False)
    if mode in protocol.learned_modes and network is None:
        logger.warning("no trained %s weights, timing a freshly initialized network", mode)
        network = build_network(mode, seed=run.seed)
    rows, fit = latency_sweep(run, _tracker_config(run, mode), network)
    r2 = float(fit.rvalue**2)
    write_csv(out / "bench.csv", ("actors", "p50_ms", "p99_ms", "frames"), rows, run)
    for n, p50, p99, _ in rows:
        print(f"{n:5d} actors  p50 {p50:7.3f} ms  p99 {p99:7.3f} ms")
    print(f"linear fit: {fit.slope * 1000.0:.3f} us/actor, R^2 {r2:.4f}")

    if args.assert_budget:
        problems = budget_problems(bench, rows, r2)
        if problems:
            raise BudgetError("; ".join(problems))
    return 0


def _relative_reduction(baseline, value):
    if baseline is None or value is None or baseline == 0:
        return None
    return (baseline - value) / baseline


def cmd_density(args, run):
    out = _out(args, run)
    density = run.density
    mode = args.mode or density.mode
    network = _network(run, mode)
    sensors = _sensors(args, run)
    rows = []
    for n in density.densities:
        base = dataclasses.replace(run.scenario, n_pedestrians=int(n), sensors=sensors)
        scenarios = scenario_configs(base, density.scenarios)
        learned, learned_frames = run_method(scenarios, _tracker_config(run, mode), network, args.workers)
        classical, classical_frames = run_method(
            scenarios, _tracker_config(run, protocol.mode_mahalanobis), None, args.workers
        )
        learned_motvo = motvo(learned_frames)
        classical_motvo = motvo(classical_frames)
        rows.append(
            (
                int(n),
                classical.idsw,
                learned.idsw,
                classical_motvo,
                learned_motvo,
                _relative_reduction(classical_motvo, learned_motvo),
            )
        )
    reductions = [r[-1] for r in rows if r[-1] is not None]
    trend = all(b >= a for a, b in zip(reductions, reductions[1:]))
    if not trend:
        logger.warning("MOTVO reduction is not non-decreasing with density: %s", reductions)
    header = ("pedestrians", "idsw_mahalanobis", f"idsw_{mode}", "motvo_mahalanobis", f"motvo_{mode}", "motvo_reduction")
    write_csv(out / "density.csv", header, rows, run)
    for row in rows:
        print("  ".join(_cell(v) for v in row))
    print(f"non-decreasing trend: {'yes' if trend else 'no'}")
    if args.assert_trend and not trend:
        raise TrendError(f"MOTVO reduction drops with density: {reductions}")
    return 0


def cmd_ablate(args, run):
    out = _out(args, run)
    mode = args.mode or protocol.mode_learned_lstm
    if mode not in protocol.learned_modes:
        raise ConfigError(f"ablate needs a learned mode, got {mode!r}")
    sensors = _sensors(args, run)
    scenarios = _scenarios(run, sensors, args.count)
    joint = _network(run, mode)
    assoc_only = _network(run, mode, learn_state=False)

    variants = [
        (f"output={output}", _tracker_config(run, mode, association_output=output), joint)
        for output in protocol.association_outputs
    ]
    variants += [
        ("state=joint", _tracker_config(run, mode), joint),
        ("state=association-only", _tracker_config(run, mode, learned_observation=False), assoc_only),
        ("report=imm", _tracker_config(run, mode), joint),
        ("report=learned", _tracker_config(run, mode, report_learned_state=True), joint),
    ]
    rows = []
    for name, tracker_config, network in variants:
        result, frames = run_method(scenarios, tracker_config, network, args.workers)
        motve_all = [result.motve.get(c) for c in protocol.classes]
        rows.append((name, result.mota, motvo(frames), _mean(motve_all), result.idsw))
        logger.info("ablate %s: MOTA %.4f, IDSW %d", name, result.mota, result.idsw)
    write_csv(out / "ablate.csv", ("variant", "MOTA", "MOTVO", "MOTVE", "IDSW"), rows, run)
    for row in rows:
        print("  ".join(_cell(v) for v in row))
    return 0


def _mean(values):
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else None


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "bench": cmd_bench,
    "density": cmd_density,
    "ablate": cmd_ablate,
}


def _command_help():
    """Sub-command name -> one-line summary, from the module docstring."""
    summaries = {}
    for line in __doc__.splitlines():
        words = line.split(None, 2)
        if len(words) == 3 and words[0] == "vrutrack":
            summaries[words[1]] = words[2]
    return summaries


def build_arg_parser():
    parser = argparse.ArgumentParser(prog="vrutrack", description=__doc__.split("\n\n")[0].strip())
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--mode", choices=protocol.association_modes, help="association mode")
    common.add_argument("--sensors", choices=tuple(SENSOR_SETS), help="sensor channels")
    common.add_argument("--seed", type=int, help="first scenario seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, default=1, help="processes for scenario fan-out")
    common.add_argument("--count", type=int, help="number of scenarios")
    common.add_argument(
        "--log-level",
        default="WARNING",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        help="logging level",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        summary = _command_help().get(name)
        command = sub.add_parser(name, parents=[common], help=summary)
        if name == "bench":
            command.add_argument("--assert-budget", action="store_true", help="fail when over the latency budget")
        if name == "density":
            command.add_argument(
                "--assert-trend", action="store_true", help="fail when the MOTVO reduction drops with density"
            )
        if name == "train":
            command.add_argument("--no-state", action="store_true", help="association-only training (w_state = 0)")
    return parser


def _apply_overrides(run, args):
    if args.seed is not None:
        run.scenario = dataclasses.replace(run.scenario, seed=args.seed)
    if args.mode is not None:
        run.tracker = dataclasses.replace(run.tracker, mode=args.mode)
    if args.sensors is not None:
        run.scenario = dataclasses.replace(run.scenario, sensors=SENSOR_SETS[args.sensors])
    if args.out is not None:
        run.paths = dataclasses.replace(run.paths, out=args.out)
    return run


def main(argv=None):
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        run = _apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](args, run)
    except (BudgetError, TrendError) as exc:
        print(f"vrutrack {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, MissingWeightsError, WeightFileError, ParseError, FileNotFoundError, ValueError) as exc:
        print(f"vrutrack {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
