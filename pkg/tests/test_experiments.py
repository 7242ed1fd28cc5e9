"""Experiment-runner tests: config validation reporting every violation,
deterministic byte-identical outputs, aggregation invariances, theory
overlay gating, sweeps, the shipped figure recipes, and the CLI surface."""

import copy
import csv
import math
import random
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml

from sgdsim.cli import main as cli_main
from sgdsim.experiments import (
    ConfigError,
    ExperimentResult,
    SUMMARY_HEADER,
    _aggregate_variant,
    emit_outputs,
    load_config,
    parse_config,
    run_experiment,
    sweep,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def base_raw(**overrides):
    raw = {
        "name": "unit",
        "objective": {"objective": "quadratic", "dim": 2, "eigenvalues": [1.0, 4.0], "sigma": 1.0},
        "distribution": {"kind": "exponential", "rate": 1.0},
        "replications": 2,
        "master_seed": 77,
        "burn_in": 5,
        "variants": [
            {
                "name": "sync",
                "protocol": "k_sync",
                "learners": 4,
                "wait_for": 4,
                "minibatch": 1,
                "iterations": 120,
                "schedule": {"kind": "fixed", "eta": 0.05},
            }
        ],
    }
    raw.update(overrides)
    return raw


# --- validation ---

def test_parse_valid_config():
    config = parse_config(base_raw())
    assert config.name == "unit"
    assert len(config.variants) == 1


def test_validation_reports_every_violation():
    raw = base_raw(
        name="bad name!",
        replications=0,
        burn_in=-1,
        distribution={"kind": "mystery"},
        variants=[
            {"name": "dup", "protocol": "k_sync", "learners": 2, "wait_for": 5,
             "iterations": 10, "schedule": {"kind": "fixed", "eta": 0.1}},
            {"name": "dup", "protocol": "teleport", "learners": 2, "wait_for": 1,
             "iterations": 10, "schedule": {"kind": "fixed", "eta": 0.1}},
        ],
    )
    with pytest.raises(ConfigError) as exc:
        parse_config(raw)
    text = str(exc.value)
    for fragment in ["name", "replications", "burn_in", "distribution",
                     "variants[0]", "variants[1]"]:
        assert fragment in text
    assert len(exc.value.violations) >= 6


def test_validation_rejects_unknown_keys_and_burn_in():
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config(base_raw(typo=1))
    with pytest.raises(ConfigError, match="burn_in"):
        parse_config(base_raw(burn_in=120))


# --- trivial and determinism contracts ---

def test_single_replication_deterministic_service_equals_the_trace():
    raw = base_raw(replications=1, burn_in=0)
    raw["distribution"] = {"kind": "deterministic", "value": 1.0}
    result = run_experiment(parse_config(raw))
    v = result.variants[0]
    outcome = result.outcomes[("sync", 0)]
    assert np.array_equal(v.iter_loss_mean, outcome.losses)
    assert np.array_equal(v.iter_wallclock_mean, outcome.times)
    assert np.all(np.isnan(v.iter_loss_stderr))  # stderr absent below 2 reps
    assert v.runtime_mean == 1.0


def test_rerun_same_config_and_seed_is_byte_identical(tmp_path):
    config = parse_config(base_raw())
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    emit_outputs(run_experiment(config), a_dir, formats=("csv",))
    emit_outputs(run_experiment(config), b_dir, formats=("csv",))
    a_files = sorted(p.name for p in a_dir.iterdir())
    assert a_files == sorted(p.name for p in b_dir.iterdir())
    for name in a_files:
        assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()


def test_parallel_workers_match_serial_execution():
    config = parse_config(base_raw())
    serial = run_experiment(config, workers=1)
    parallel = run_experiment(config, workers=2)
    sv, pv = serial.variants[0], parallel.variants[0]
    assert np.array_equal(sv.iter_loss_mean, pv.iter_loss_mean)
    assert sv.runtime_mean == pv.runtime_mean


def test_worker_count_env_override(monkeypatch):
    from sgdsim.experiments import _worker_count

    assert _worker_count(4) == 4
    monkeypatch.setenv("SGDSIM_WORKERS", "2")
    assert _worker_count(8) == 2


def test_aggregation_invariant_under_replication_order():
    config = parse_config(base_raw(replications=4))
    result = run_experiment(config)
    reps = [result.outcomes[("sync", r)] for r in range(4)]
    shuffled = reps[:]
    random.Random(0).shuffle(shuffled)
    a = _aggregate_variant("sync", config.variants[0][1], reps, config.burn_in, config.grid_points)
    b = _aggregate_variant("sync", config.variants[0][1], shuffled, config.burn_in, config.grid_points)
    assert np.array_equal(a.iter_loss_mean, b.iter_loss_mean)
    assert np.array_equal(a.time_loss_mean, b.time_loss_mean)
    assert a.runtime_mean == b.runtime_mean


# --- outputs ---

def test_emitted_csv_round_trips_exactly(tmp_path):
    config = parse_config(base_raw())
    result = run_experiment(config)
    emit_outputs(result, tmp_path, formats=("csv",))
    v = result.variants[0]
    with open(tmp_path / "sync__vs_iteration.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "wallclock", "loss", "stderr", "eta"]
    parsed = np.array([[float(c) for c in row] for row in rows[1:]])
    assert np.array_equal(parsed[:, 1], v.iter_wallclock_mean)
    assert np.array_equal(parsed[:, 2], v.iter_loss_mean)
    with open(tmp_path / "sync__vs_wallclock.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    parsed = np.array([[float(c) for c in row] for row in rows[1:]])
    assert np.array_equal(parsed[:, 0], v.time_grid)
    assert np.array_equal(parsed[:, 1], v.time_loss_mean)


def test_summary_schema_and_bound_column(tmp_path):
    config = parse_config(base_raw())
    result = run_experiment(config)
    emit_outputs(result, tmp_path, formats=("csv",))
    with open(tmp_path / "summary.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == SUMMARY_HEADER
    assert rows[1][0] == "sync"
    assert rows[1][-1] == "sync_fixed_rate"  # eta=0.05 <= 1/(2L) = 0.125
    assert float(rows[1][7]) == pytest.approx(2.083333333, rel=1e-6)  # H_4


def test_empty_result_writes_header_only_summary(tmp_path):
    config = parse_config(base_raw())
    empty = ExperimentResult(config=config, variants=[], outcomes={})
    emit_outputs(empty, tmp_path, formats=("csv",))
    with open(tmp_path / "summary.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows == [SUMMARY_HEADER]


def test_plot_outputs_are_svg(tmp_path):
    config = parse_config(base_raw())
    files = emit_outputs(run_experiment(config), tmp_path, formats=("csv", "plot"))
    svgs = [f for f in files if str(f).endswith(".svg")]
    assert len(svgs) == 2
    for f in svgs:
        assert Path(f).read_bytes().lstrip().startswith(b"<?xml")


def test_unknown_format_rejected(tmp_path):
    config = parse_config(base_raw())
    with pytest.raises(ConfigError):
        emit_outputs(run_experiment(config), tmp_path, formats=("pdf",))


# --- theory overlays ---

def test_bound_not_attached_when_step_size_violated():
    raw = base_raw()
    raw["variants"][0]["schedule"] = {"kind": "fixed", "eta": 0.2}  # > 1/(2L)
    result = run_experiment(parse_config(raw))
    assert result.variants[0].bound is None
    assert result.variants[0].bound_name == ""


def test_async_bound_uses_estimated_constants():
    raw = base_raw(replications=3)
    raw["variants"] = [{
        "name": "async", "protocol": "k_async", "learners": 4, "wait_for": 1,
        "minibatch": 1, "iterations": 400, "schedule": {"kind": "fixed", "eta": 0.02},
    }]
    result = run_experiment(parse_config(raw))
    v = result.variants[0]
    assert v.bound_name == "async_fixed_rate"
    assert 0 < v.p_zero_hat < 1
    assert v.gamma_hat is not None
    # dominance on this run: empirical mean below the bound throughout
    assert np.all(v.iter_loss_mean <= v.bound.values[1:] + 1e-12)


def test_variable_rate_bound_attached_for_compensated_schedule():
    raw = base_raw(replications=2)
    raw["variants"] = [{
        "name": "sched", "protocol": "k_async", "learners": 4, "wait_for": 1,
        "minibatch": 1, "iterations": 300,
        "schedule": {"kind": "staleness_compensated", "scale": 0.0005, "max_eta": 0.05},
    }]
    result = run_experiment(parse_config(raw))
    v = result.variants[0]
    assert v.bound_name == "variable_rate"
    assert len(v.bound.values) == 301


# --- sweeps ---

def test_sweep_axis_k_single_value_equals_direct_run():
    config = parse_config(base_raw(replications=1))
    swept = sweep(config, "K", [4])[0]
    direct = run_experiment(config)
    assert np.array_equal(
        swept.variants[0].iter_loss_mean, direct.variants[0].iter_loss_mean
    )
    assert swept.config.name == "unit__K4"


def test_sweep_axis_k_rejects_invalid_value():
    config = parse_config(base_raw())
    with pytest.raises(ConfigError, match="axis value"):
        sweep(config, "K", [9])  # > learners


def test_sweep_axis_m_adjusts_shifted_exponential():
    raw = base_raw(replications=1, unit_compute_time=0.5)
    raw["distribution"] = {"kind": "shifted_exponential", "shift": 1.0, "rate": 1.0}
    config = parse_config(raw)
    results = sweep(config, "m", [2, 4])
    shifts = [r.config.distribution_spec["shift"] for r in results]
    assert shifts == [1.0, 2.0]
    ms = [r.variants[0].config.minibatch for r in results]
    assert ms == [2, 4]


def test_sweep_axis_m_requires_shifted_exponential_when_coupled():
    config = parse_config(base_raw(unit_compute_time=1.0))
    with pytest.raises(ConfigError, match="shifted_exponential"):
        sweep(config, "m", [2])


def test_sweep_axis_eta_replaces_rate():
    config = parse_config(base_raw(replications=1))
    results = sweep(config, "eta", [0.01, 0.02])
    etas = [r.variants[0].config.schedule.eta for r in results]
    assert etas == [0.01, 0.02]


def test_sweep_rejects_unknown_axis():
    with pytest.raises(ConfigError):
        sweep(parse_config(base_raw()), "P", [2])


# --- shipped figure recipes ---

def test_fig09_recipe_has_one_curve_per_k(tmp_path):
    config = load_config(CONFIGS / "fig09_kasync_vs_kbatchasync.yaml")
    shrunk = replace(
        config,
        replications=1,
        burn_in=5,
        variants=tuple(
            (label, replace(v, iterations=50)) for label, v in config.variants
        ),
    )
    result = run_experiment(shrunk)
    files = emit_outputs(result, tmp_path, formats=("csv",))
    names = {Path(f).name for f in files}
    for k in (1, 4, 8):
        assert f"kasync_k{k}__vs_wallclock.csv" in names
        assert f"kbatchasync_k{k}__vs_wallclock.csv" in names


@pytest.mark.parametrize("recipe", ["fig05_pareto.yaml", "fig05_shifted_exp.yaml"])
def test_fig05_recipe_runtime_ordering(recipe):
    # for K < P: batch-async finishes 2000 updates fastest, then K-async
    # (residual work is preserved), then K-sync (every straggler restarts)
    config = load_config(CONFIGS / recipe)
    config = replace(config, replications=2)
    result = run_experiment(config)
    totals = {v.label: float(v.iter_wallclock_mean[-1]) for v in result.variants}
    assert totals["kbatchasync"] < totals["kasync"] < totals["ksync"]


def test_all_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.yaml")):
        config = load_config(path)
        assert config.variants


# --- CLI ---

def _write_config(tmp_path, raw):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_cli_run_writes_outputs_and_exits_zero(tmp_path, capsys):
    path = _write_config(tmp_path, base_raw(replications=1))
    rc = cli_main(["run", str(path), "--out", str(tmp_path / "out"), "--formats", "csv"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "summary.csv" in out
    assert (tmp_path / "out" / "summary.csv").exists()


def test_cli_run_invalid_config_exits_two(tmp_path, capsys):
    path = _write_config(tmp_path, base_raw(replications=0))
    rc = cli_main(["run", str(path), "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "replications" in capsys.readouterr().err


def test_cli_run_missing_file_exits_two(tmp_path):
    assert cli_main(["run", str(tmp_path / "nope.yaml")]) == 2


def test_cli_run_divergence_exits_three(tmp_path, capsys):
    raw = base_raw(replications=1)
    raw["objective"]["sigma"] = 0.0
    raw["variants"][0]["schedule"] = {"kind": "fixed", "eta": 2.0}  # diverges
    path = _write_config(tmp_path, raw)
    rc = cli_main(["run", str(path), "--out", str(tmp_path / "out"), "--formats", "csv"])
    assert rc == 3
    assert "divergence" in capsys.readouterr().err


def test_cli_seed_override_changes_outputs(tmp_path):
    path = _write_config(tmp_path, base_raw(replications=1))
    cli_main(["run", str(path), "--out", str(tmp_path / "a"), "--formats", "csv", "--seed", "1"])
    cli_main(["run", str(path), "--out", str(tmp_path / "b"), "--formats", "csv", "--seed", "2"])
    a = (tmp_path / "a" / "sync__vs_iteration.csv").read_bytes()
    b = (tmp_path / "b" / "sync__vs_iteration.csv").read_bytes()
    assert a != b


def test_cli_sweep_writes_one_directory_per_value(tmp_path):
    path = _write_config(tmp_path, base_raw(replications=1))
    rc = cli_main([
        "sweep", str(path), "--axis", "K", "--values", "1,2,4",
        "--out", str(tmp_path / "out"), "--formats", "csv",
    ])
    assert rc == 0
    for k in (1, 2, 4):
        assert (tmp_path / "out" / f"unit__K{k}" / "summary.csv").exists()


def test_cli_theory_speedup_stdout(capsys):
    rc = cli_main([
        "theory", "speedup", "--dist", '{"kind": "exponential", "rate": 1.0}',
        "--p-max", "8",
    ])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "P,speedup,method,p_log_p"
    table = {int(r.split(",")[0]): float(r.split(",")[1]) for r in lines[1:]}
    assert table[8] == pytest.approx(21.742857142857144, rel=1e-9)
    assert list(table) == [2, 4, 8]


def test_cli_theory_speedup_bad_json_exits_two(capsys):
    rc = cli_main(["theory", "speedup", "--dist", "{not json"])
    assert rc == 2
