# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.
import csv
import json
from types import SimpleNamespace

import pytest

from vrutrack import protocol
from vrutrack import cli
from vrutrack.cli import budget_limit, budget_problems, build_arg_parser, main
from vrutrack.config import BenchConfig, loads

CONFIG = """
[scenario]
duration = 1.0
n_pedestrians = 3
n_bicyclists = 1

[experiment]
n_scenarios = 1
train_scenarios = 2
train_densities = [3]

[training]
epochs = 1

[tracker]
learned_observation = false

[paths]
weights_dir = "{weights}"

[bench]
actor_counts = [2, 4]
frames = 6
warmup = 1
pin_cpu = false
min_r2 = 0.0
mode = "mahalanobis"
{bench_extra}

[density]
densities = [2, 3]
scenarios = 1
mode = "learned-mlp"
"""


@pytest.fixture
def workspace(tmp_path):
    def write(bench_extra=""):
        path = tmp_path / "run.toml"
        weights = (tmp_path / "weights").as_posix()
        path.write_text(CONFIG.format(weights=weights, bench_extra=bench_extra))
        return path

    return tmp_path, write


def _run(config, out, *argv):
    return main([*argv, "--config", str(config), "--out", str(out)])


def _rows(path):
    with open(path, newline="") as fileobj:
        return list(csv.reader(fileobj))


def test_fixture_config_is_valid(workspace):
    tmp_path, write = workspace
    run = loads(write().read_text())
    assert 1 == run.experiment.n_scenarios
    assert not run.tracker.learned_observation


def test_every_command_is_registered():
    parser = build_arg_parser()
    for command in ("simulate", "train", "eval", "compare", "bench", "density", "ablate"):
        args = parser.parse_args([command])
        assert command == args.command
    assert parser.parse_args(["train", "--no-state"]).no_state
    assert parser.parse_args(["bench", "--assert-budget"]).assert_budget
    assert parser.parse_args(["density", "--assert-trend"]).assert_trend


def test_simulate_writes_logs_and_metadata(workspace):
    tmp_path, write = workspace
    config = write()
    assert 0 == _run(config, tmp_path / "a", "simulate", "--count", "2", "--sensors", "lidar+camera")
    assert 0 == _run(config, tmp_path / "b", "simulate", "--count", "2", "--sensors", "lidar+camera")
    header, *rows = _rows(tmp_path / "a" / "simulate.csv")
    assert ["seed", "actors", "frames", "detections", "log"] == header
    assert [["0", "4"], ["1", "4"]] == [row[:2] for row in rows]
    for name in ("scenario-0000.log", "scenario-0001.log"):
        first = (tmp_path / "a" / name).read_text()
        assert first == (tmp_path / "b" / name).read_text()
        assert first.startswith(protocol.ext_vrulog)
    meta = json.loads((tmp_path / "a" / "simulate.meta.json").read_text())
    assert {"git_describe", "seed", "config_hash"} == set(meta)
    assert 0 == meta["seed"]


def test_eval_classical_mode(workspace):
    tmp_path, write = workspace
    out = tmp_path / "out"
    assert 0 == _run(write(), out, "eval", "--mode", "mahalanobis")
    result = json.loads((out / "eval-mahalanobis.json").read_text())
    assert 0 < result["gt"]
    assert (out / "tracks" / "mahalanobis-0000.log").exists()
    header, row = _rows(out / "eval-mahalanobis.csv")
    assert "method" == header[0]
    assert "mahalanobis" == row[0]


def test_eval_without_weights_says_how_to_train(workspace, capsys):
    tmp_path, write = workspace
    assert 2 == _run(write(), tmp_path / "out", "eval", "--mode", "learned-mlp")
    assert "vrutrack train --mode learned-mlp" in capsys.readouterr().err


def test_bad_config_is_a_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[tracker]\nnearest = 1\n")
    assert 2 == main(["eval", "--config", str(path), "--out", str(tmp_path / "out")])
    assert "nearest" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert 2 == main(["eval", "--config", str(tmp_path / "absent.toml"), "--out", str(tmp_path / "out")])


def test_bench_within_and_over_budget(workspace):
    tmp_path, write = workspace
    out = tmp_path / "out"
    assert 0 == _run(write(), out, "bench", "--assert-budget")
    header, *rows = _rows(out / "bench.csv")
    assert ["actors", "p50_ms", "p99_ms", "frames"] == header
    assert [["2", "6"], ["4", "6"]] == [[row[0], row[3]] for row in rows]
    config = write(bench_extra="budget_ms = 1e-9\nbudget_max_ms = 1e-9\nbudget_actors = 2\nbudget_max_actors = 4")
    assert 1 == _run(config, out, "bench", "--assert-budget")
    assert 0 == _run(config, out, "bench")


def test_budget_limit_holds_up_to_the_largest_sweep():
    bench = BenchConfig()
    assert 5.0 == budget_limit(bench, 50)
    assert 5.0 == budget_limit(bench, 100)
    assert 5.0 == budget_limit(bench, 200)
    assert 5.0 == budget_limit(bench, 500)
    assert 10.0 == budget_limit(bench, 1000)


def test_budget_limit_interpolates_between_the_two_bounds():
    bench = BenchConfig(budget_ms=2.5, budget_actors=100, budget_max_ms=5.0, budget_max_actors=500)
    assert 2.5 == budget_limit(bench, 10)
    assert 3.75 == budget_limit(bench, 300)
    assert 5.0 == budget_limit(bench, 500)


def test_budget_problems_checks_every_actor_count():
    bench = BenchConfig()
    rows = [(10, 6.0, 7.0, 45), (100, 1.0, 2.0, 45), (500, 5.5, 6.0, 45)]
    problems = budget_problems(bench, rows, r2=0.99)
    assert 2 == len(problems)
    assert "at 10 actors" in problems[0]
    assert "at 500 actors" in problems[1]
    assert [] == budget_problems(bench, [(500, 5.0, 9.0, 45)], r2=0.99)


def test_budget_problems_flags_nonlinear_latency():
    bench = BenchConfig(min_r2=0.95)
    (problem,) = budget_problems(bench, [(10, 0.1, 0.2, 45)], r2=0.9)
    assert "R^2 0.9000" in problem


def test_bench_config_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        BenchConfig(budget_actors=500, budget_max_actors=100)
    with pytest.raises(ValueError):
        BenchConfig(budget_ms=5.0, budget_max_ms=1.0)
    with pytest.raises(ValueError):
        BenchConfig(budget_max_ms=0.0)


def test_density_trend_break_fails_only_when_asserted(workspace, monkeypatch):
    tmp_path, write = workspace
    config = write()
    out = tmp_path / "out"

    def fake_run_method(scenarios, tracker_config, network, workers):
        return SimpleNamespace(idsw=0), scenarios

    def with_motvo(values):
        # learned then mahalanobis per density
        values = iter(values)
        monkeypatch.setattr(cli, "motvo", lambda frames: next(values))

    monkeypatch.setattr(cli, "run_method", fake_run_method)
    with_motvo([0.5, 1.0, 0.75, 1.0])
    assert 0 == _run(config, out, "density", "--mode", "mahalanobis")
    with_motvo([0.5, 1.0, 0.75, 1.0])
    assert 1 == _run(config, out, "density", "--mode", "mahalanobis", "--assert-trend")
    with_motvo([0.75, 1.0, 0.5, 1.0])
    assert 0 == _run(config, out, "density", "--mode", "mahalanobis", "--assert-trend")
    header, *rows = _rows(out / "density.csv")
    assert ["0.25", "0.5"] == [row[-1] for row in rows]


def test_train_then_evaluate_learned_mode(workspace):
    tmp_path, write = workspace
    config = write()
    out = tmp_path / "out"
    assert 0 == _run(config, out, "train", "--mode", "learned-mlp")
    assert (tmp_path / "weights" / "learned-mlp.weights").exists()
    header, *rows = _rows(out / "train-learned-mlp.csv")
    assert ["epoch", "train_loss", "val_loss", "val_accuracy", "learning_rate"] == header
    assert ["1"] == [row[0] for row in rows]

    assert 0 == _run(config, out, "eval", "--mode", "learned-mlp")
    assert (out / "eval-learned-mlp.json").exists()

    assert 0 == _run(config, out, "density")
    header, *rows = _rows(out / "density.csv")
    assert "idsw_learned-mlp" in header
    assert ["2", "3"] == [row[0] for row in rows]

    assert 2 == _run(config, out, "ablate", "--mode", "learned-mlp")
    assert 0 == _run(config, out, "train", "--mode", "learned-mlp", "--no-state")
    assert (tmp_path / "weights" / "learned-mlp-assoc.weights").exists()
    assert 0 == _run(config, out, "ablate", "--mode", "learned-mlp")
    variants = [row[0] for row in _rows(out / "ablate.csv")[1:]]
    assert "state=association-only" in variants
    assert len(protocol.association_outputs) + 4 == len(variants)


def test_train_refuses_classical_modes(workspace):
    tmp_path, write = workspace
    assert 2 == _run(write(), tmp_path / "out", "train", "--mode", "iou")
