"""Config-driven experiment runner: simulate (variant x replication) grids,
aggregate loss curves against iteration count and wall-clock time, attach
theory overlays where their preconditions hold, and emit CSV/SVG artifacts.

Configs are single YAML files of tagged records (see configs/ for the
shipped figure recipes). Replications are independent simulations keyed by
(variant, replication index); every learner stream is derived from the
master seed, so results do not depend on execution order and identical
(config, seed) reruns emit byte-identical CSVs.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .distributions import (
    Exponential,
    ShiftedExponential,
    UnsupportedAnalyticError,
    dist_from_spec,
    expected_order_statistic,
    make_rng,
    mix64,
)
from .objectives import (
    FixedRate,
    StalenessCompensatedRate,
    objective_from_spec,
    schedule_from_spec,
)
from .simulator import Protocol, VariantConfig, run
from .theory import (
    BoundSeries,
    StepSizeError,
    TheoryParams,
    bound_kasync,
    bound_ksync,
    bound_variable_lr,
    pooled_gamma,
    pooled_p0,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "VariantResult",
    "RepOutcome",
    "load_config",
    "parse_config",
    "run_experiment",
    "sweep",
    "emit_outputs",
    "SUMMARY_HEADER",
]

SUMMARY_HEADER = [
    "variant",
    "K",
    "P",
    "m",
    "eta",
    "mean_T",
    "stderr_T",
    "theory_T",
    "final_loss",
    "bound_applied",
]

_PROTOCOLS = {p.value: p for p in Protocol}


class ConfigError(ValueError):
    """Invalid experiment config; carries every violation found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config:\n" + "\n".join(f"  - {v}" for v in self.violations))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    variants: tuple  # of (label, VariantConfig)
    objective_spec: dict
    distribution_spec: dict
    replications: int
    master_seed: int
    burn_in: int
    initial_scale: float = 1.0
    unit_compute_time: float | None = None
    grid_points: int = 200
    output_dir: str | None = None


def _filesystem_safe(name: str) -> bool:
    return bool(name) and all(c.isalnum() or c in "-_." for c in name)


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a config mapping, reporting every violation at once."""
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError([f"config must be a mapping, got {type(raw).__name__}"])

    name = raw.get("name", "")
    if not _filesystem_safe(str(name)):
        errors.append(f"name must be a non-empty filesystem-safe string, got {name!r}")

    replications = raw.get("replications", 1)
    if not isinstance(replications, int) or replications < 1:
        errors.append(f"replications must be an integer >= 1, got {replications!r}")

    master_seed = raw.get("master_seed", 0)
    if not isinstance(master_seed, int):
        errors.append(f"master_seed must be an integer, got {master_seed!r}")

    burn_in = raw.get("burn_in", 0)
    if not isinstance(burn_in, int) or burn_in < 0:
        errors.append(f"burn_in must be a non-negative integer, got {burn_in!r}")

    objective_spec = raw.get("objective")
    try:
        objective_from_spec(objective_spec)
    except (ValueError, KeyError, TypeError) as exc:
        errors.append(f"objective: {exc}")

    distribution_spec = raw.get("distribution")
    try:
        dist_from_spec(distribution_spec)
    except ValueError as exc:
        errors.append(f"distribution: {exc}")

    variants = []
    raw_variants = raw.get("variants")
    if not isinstance(raw_variants, list) or not raw_variants:
        errors.append("variants must be a non-empty list")
        raw_variants = []
    labels = set()
    for idx, v in enumerate(raw_variants):
        label = str(v.get("name", f"variant{idx}")) if isinstance(v, dict) else f"variant{idx}"
        try:
            if not isinstance(v, dict):
                raise ValueError(f"variant entry must be a mapping, got {v!r}")
            if not _filesystem_safe(label):
                raise ValueError(f"variant name {label!r} is not filesystem-safe")
            if label in labels:
                raise ValueError(f"duplicate variant name {label!r}")
            protocol = v.get("protocol")
            if protocol not in _PROTOCOLS:
                raise ValueError(f"protocol must be one of {sorted(_PROTOCOLS)}, got {protocol!r}")
            cfg = VariantConfig(
                protocol=_PROTOCOLS[protocol],
                num_learners=int(v["learners"]),
                wait_for=int(v["wait_for"]),
                minibatch=int(v.get("minibatch", 1)),
                schedule=schedule_from_spec(v["schedule"]),
                iterations=int(v["iterations"]),
            )
            labels.add(label)
            variants.append((label, cfg))
        except (ValueError, KeyError, TypeError) as exc:
            errors.append(f"variants[{idx}] ({label}): {exc}")

    if isinstance(burn_in, int) and burn_in >= 0:
        for label, cfg in variants:
            if burn_in >= cfg.iterations:
                errors.append(f"burn_in={burn_in} must be < iterations for variant {label!r}")

    unit = raw.get("unit_compute_time")
    if unit is not None and not (isinstance(unit, (int, float)) and unit > 0):
        errors.append(f"unit_compute_time must be > 0 when given, got {unit!r}")

    initial_scale = raw.get("initial_scale", 1.0)
    if not isinstance(initial_scale, (int, float)):
        errors.append(f"initial_scale must be a number, got {initial_scale!r}")

    grid_points = raw.get("grid_points", 200)
    if not isinstance(grid_points, int) or grid_points < 2:
        errors.append(f"grid_points must be an integer >= 2, got {grid_points!r}")

    known = {
        "name", "replications", "master_seed", "burn_in", "objective",
        "distribution", "variants", "unit_compute_time", "initial_scale",
        "grid_points", "output_dir",
    }
    for key in raw:
        if key not in known:
            errors.append(f"unknown config key {key!r}")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        name=str(name),
        variants=tuple(variants),
        objective_spec=objective_spec,
        distribution_spec=distribution_spec,
        replications=replications,
        master_seed=master_seed,
        burn_in=burn_in,
        initial_scale=float(initial_scale),
        unit_compute_time=None if unit is None else float(unit),
        grid_points=grid_points,
        output_dir=raw.get("output_dir"),
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return parse_config(raw)


@dataclass
class RepOutcome:
    """Compact per-replication payload returned by workers."""

    label: str
    replication: int
    init_loss: float
    times: np.ndarray
    losses: np.ndarray
    etas: np.ndarray
    diverged: bool
    diverged_at: int | None
    zero_staleness: int
    contributions: int


def _initial_params(objective, scale: float) -> np.ndarray:
    return np.full(objective.dim, scale)


def _simulate_rep(task) -> RepOutcome:
    """Build the objective and distribution inside the worker (closures do
    not pickle) and run one replication."""
    label, variant, objective_spec, distribution_spec, master_seed, rep, scale = task
    objective = objective_from_spec(objective_spec)
    dist = dist_from_spec(distribution_spec)
    trace = run(
        variant,
        objective,
        dist,
        master_seed,
        initial_params=_initial_params(objective, scale),
        replication=rep,
    )
    zero = sum(sum(1 for s in r.staleness if s == 0) for r in trace.records)
    total = sum(len(r.staleness) for r in trace.records)
    return RepOutcome(
        label=label,
        replication=rep,
        init_loss=objective.loss(_initial_params(objective, scale)),
        times=trace.wallclocks(),
        losses=trace.losses(),
        etas=trace.etas(),
        diverged=trace.diverged,
        diverged_at=trace.diverged_at,
        zero_staleness=zero,
        contributions=total,
    )


@dataclass
class VariantResult:
    label: str
    config: VariantConfig
    runtime_mean: float
    runtime_stderr: float
    theory_runtime: float
    iterations: np.ndarray
    iter_wallclock_mean: np.ndarray
    iter_loss_mean: np.ndarray
    iter_loss_stderr: np.ndarray
    iter_eta_mean: np.ndarray
    time_grid: np.ndarray
    time_loss_mean: np.ndarray
    time_loss_stderr: np.ndarray
    final_loss: float
    diverged_reps: tuple
    bound: BoundSeries | None = None
    bound_name: str = ""
    p_zero_hat: float | None = None
    gamma_hat: float | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    variants: list  # of VariantResult
    outcomes: dict  # (label, rep) -> RepOutcome

    @property
    def any_divergence(self) -> bool:
        return any(v.diverged_reps for v in self.variants)


def _nominal_eta(schedule) -> float:
    return schedule.eta if isinstance(schedule, FixedRate) else schedule.max_eta


def _theory_runtime(config: VariantConfig, dist, master_seed: int) -> float:
    """Analytic expected per-iteration runtime where the theory gives one:
    the K-th order statistic for the synchronous protocol (exactly, for any
    law), K/(P*mu) for batch-sync under exponential service, K*E[X]/P for
    batch-async in the renewal limit, and the order statistic for k-async
    under exponential service (the equality case). NaN otherwise."""
    p, k = config.num_learners, config.wait_for
    if config.protocol is Protocol.K_SYNC:
        try:
            return expected_order_statistic(dist, k, p)
        except UnsupportedAnalyticError:
            rng = make_rng(mix64(master_seed ^ 0x5EED))
            return expected_order_statistic(dist, k, p, method="monte_carlo", samples=200_000, rng=rng)
    if config.protocol is Protocol.K_BATCH_SYNC:
        if isinstance(dist, Exponential):
            return k / (p * dist.rate)
        return math.nan
    if config.protocol is Protocol.K_BATCH_ASYNC:
        return k * dist.mean() / p
    if isinstance(dist, Exponential):
        return expected_order_statistic(dist, k, p)
    return math.nan


def _step_curve(times, losses, init_loss, grid):
    """Last-observed-value interpolation: loss is piecewise constant in
    wall-clock time, so linear interpolation would fabricate values."""
    idx = np.searchsorted(times, grid, side="right") - 1
    padded = np.concatenate([[init_loss], losses])
    return padded[idx + 1]


def _aggregate_variant(
    label,
    config: VariantConfig,
    reps,
    burn_in: int,
    grid_points: int,
) -> VariantResult:
    reps = sorted(reps, key=lambda r: r.replication)
    complete = [r for r in reps if not r.diverged]
    diverged = tuple(r.replication for r in reps if r.diverged)

    if complete:
        losses = np.stack([r.losses for r in complete])
        times = np.stack([r.times for r in complete])
        etas = np.stack([r.etas for r in complete])
        n = len(complete)
        iter_loss_mean = losses.mean(axis=0)
        iter_loss_stderr = (
            losses.std(axis=0, ddof=1) / math.sqrt(n) if n >= 2 else np.full(losses.shape[1], math.nan)
        )
        iter_wallclock_mean = times.mean(axis=0)
        iter_eta_mean = etas.mean(axis=0)
        grid = np.linspace(0.0, float(times[:, -1].min()), grid_points)
        curves = np.stack(
            [_step_curve(r.times, r.losses, r.init_loss, grid) for r in complete]
        )
        time_loss_mean = curves.mean(axis=0)
        time_loss_stderr = (
            curves.std(axis=0, ddof=1) / math.sqrt(n) if n >= 2 else np.full(len(grid), math.nan)
        )
        increments = np.diff(np.concatenate([np.zeros((n, 1)), times], axis=1), axis=1)[:, burn_in:]
        if increments.shape[1] == 0:
            runtime_mean = runtime_stderr = math.nan
        else:
            rep_means = increments.mean(axis=1)
            runtime_mean = float(rep_means.mean())
            if n >= 2:
                runtime_stderr = float(rep_means.std(ddof=1) / math.sqrt(n))
            elif increments.shape[1] >= 2:
                runtime_stderr = float(increments[0].std(ddof=1) / math.sqrt(increments.shape[1]))
            else:
                runtime_stderr = math.nan
        final_loss = float(iter_loss_mean[-1])
        iterations = np.arange(1, losses.shape[1] + 1)
    else:
        iterations = np.array([], dtype=int)
        iter_loss_mean = iter_loss_stderr = iter_wallclock_mean = iter_eta_mean = np.array([])
        grid = time_loss_mean = time_loss_stderr = np.array([])
        runtime_mean = runtime_stderr = final_loss = math.nan

    return VariantResult(
        label=label,
        config=config,
        runtime_mean=runtime_mean,
        runtime_stderr=runtime_stderr,
        theory_runtime=math.nan,
        iterations=iterations,
        iter_wallclock_mean=iter_wallclock_mean,
        iter_loss_mean=iter_loss_mean,
        iter_loss_stderr=iter_loss_stderr,
        iter_eta_mean=iter_eta_mean,
        time_grid=grid,
        time_loss_mean=time_loss_mean,
        time_loss_stderr=time_loss_stderr,
        final_loss=final_loss,
        diverged_reps=diverged,
    )


def _attach_theory(result: VariantResult, config: ExperimentConfig, reps) -> None:
    """Attach the convergence-bound overlay when the step-size precondition
    (and, for asynchronous protocols, the staleness hypothesis) holds."""
    objective = objective_from_spec(config.objective_spec)
    dist = dist_from_spec(config.distribution_spec)
    variant = result.config
    result.theory_runtime = _theory_runtime(variant, dist, config.master_seed)
    complete = [r for r in reps if not r.diverged]
    if not complete:
        return
    f0_gap = complete[0].init_loss - objective.optimum_value
    horizon = variant.iterations
    synchronous = variant.protocol in (Protocol.K_SYNC, Protocol.K_BATCH_SYNC)

    if isinstance(variant.schedule, FixedRate):
        params_kw = dict(
            eta=variant.schedule.eta,
            smoothness=objective.smoothness,
            strong_convexity=objective.strong_convexity,
            noise_var=objective.noise_var,
            multiplicative_noise=objective.multiplicative_noise,
            minibatch=variant.minibatch,
            wait_for=variant.wait_for,
            horizon=horizon,
        )
        if synchronous:
            try:
                result.bound = bound_ksync(TheoryParams(**params_kw), f0_gap)
                result.bound_name = "sync_fixed_rate"
            except StepSizeError:
                pass
            return
        p0_hat = pooled_p0_from_outcomes(complete)
        gamma = _estimation_gamma(config, variant)
        result.p_zero_hat = p0_hat
        result.gamma_hat = gamma
        if gamma > 1.0:
            return  # staleness hypothesis violated; bound does not apply
        try:
            result.bound = bound_kasync(
                TheoryParams(**params_kw, gamma=gamma, p_zero=p0_hat), f0_gap
            )
            result.bound_name = "async_fixed_rate"
        except StepSizeError:
            pass
        return

    # staleness-compensated schedule: variable-rate bound over the mean
    # realized rate sequence
    p0_hat = 1.0 if synchronous else pooled_p0_from_outcomes(complete)
    result.p_zero_hat = p0_hat
    params = TheoryParams(
        eta=variant.schedule.max_eta,
        smoothness=objective.smoothness,
        strong_convexity=objective.strong_convexity,
        noise_var=objective.noise_var,
        multiplicative_noise=objective.multiplicative_noise,
        minibatch=variant.minibatch,
        wait_for=variant.wait_for,
        p_zero=p0_hat,
        schedule_scale=variant.schedule.scale,
        max_eta=variant.schedule.max_eta,
        horizon=horizon,
    )
    try:
        result.bound = bound_variable_lr(result.iter_eta_mean, params, f0_gap)
        result.bound_name = "variable_rate"
    except StepSizeError:
        pass


def pooled_p0_from_outcomes(outcomes) -> float:
    zero = sum(r.zero_staleness for r in outcomes)
    total = sum(r.contributions for r in outcomes)
    return zero / total if total else math.nan


def _estimation_gamma(config: ExperimentConfig, variant: VariantConfig) -> float:
    """Staleness coefficient from a dedicated snapshot re-run of
    replication 0 (identical draws; snapshots do not perturb streams)."""
    objective = objective_from_spec(config.objective_spec)
    dist = dist_from_spec(config.distribution_spec)
    trace = run(
        variant,
        objective,
        dist,
        config.master_seed,
        initial_params=_initial_params(objective, config.initial_scale),
        replication=0,
        keep_snapshots=True,
    )
    return pooled_gamma([trace], objective).value


def _worker_count(workers: int | None) -> int:
    env = os.environ.get("SGDSIM_WORKERS")
    if env is not None:
        return max(1, int(env))
    return max(1, workers or 1)


def run_experiment(config: ExperimentConfig, workers: int | None = 1) -> ExperimentResult:
    """Run every (variant x replication), aggregate, attach theory."""
    tasks = [
        (label, variant, config.objective_spec, config.distribution_spec,
         config.master_seed, rep, config.initial_scale)
        for label, variant in config.variants
        for rep in range(config.replications)
    ]
    nworkers = _worker_count(workers)
    if nworkers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            outcomes = list(pool.map(_simulate_rep, tasks))
    else:
        outcomes = [_simulate_rep(t) for t in tasks]
    by_key = {(o.label, o.replication): o for o in outcomes}

    variants = []
    for label, variant in config.variants:
        reps = [by_key[(label, r)] for r in range(config.replications)]
        agg = _aggregate_variant(label, variant, reps, config.burn_in, config.grid_points)
        _attach_theory(agg, config, reps)
        variants.append(agg)
    return ExperimentResult(config=config, variants=variants, outcomes=by_key)


def sweep(config: ExperimentConfig, axis: str, values, workers: int | None = 1):
    """One experiment per axis value; axis is 'K', 'm' or 'eta'.

    Sweeping m with unit_compute_time set re-shifts a shifted-exponential
    service law to shift = m * unit_compute_time, modelling compute time
    that grows with the mini-batch.
    """
    if axis not in ("K", "m", "eta"):
        raise ConfigError([f"sweep axis must be K, m or eta, got {axis!r}"])
    results = []
    for value in values:
        errors = []
        new_variants = []
        for label, variant in config.variants:
            try:
                if axis == "K":
                    new_variant = replace(variant, wait_for=int(value))
                elif axis == "m":
                    new_variant = replace(variant, minibatch=int(value))
                else:
                    schedule = variant.schedule
                    if isinstance(schedule, FixedRate):
                        schedule = FixedRate(eta=float(value))
                    else:
                        schedule = StalenessCompensatedRate(
                            scale=schedule.scale, max_eta=float(value)
                        )
                    new_variant = replace(variant, schedule=schedule)
            except ValueError as exc:
                errors.append(f"axis value {value!r} invalid for variant {label!r}: {exc}")
                continue
            new_variants.append((f"{label}__{axis}{value}", new_variant))
        if errors:
            raise ConfigError(errors)
        dist_spec = config.distribution_spec
        if axis == "m" and config.unit_compute_time is not None:
            dist = dist_from_spec(dist_spec)
            if not isinstance(dist, ShiftedExponential):
                raise ConfigError(
                    ["unit_compute_time requires a shifted_exponential distribution for m sweeps"]
                )
            dist_spec = dict(dist_spec, shift=float(value) * config.unit_compute_time)
        swept = replace(
            config,
            name=f"{config.name}__{axis}{value}",
            variants=tuple(new_variants),
            distribution_spec=dist_spec,
        )
        results.append(run_experiment(swept, workers=workers))
    return results


# --- outputs ---


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


CURVE_ITER_HEADER = ["iteration", "wallclock", "loss", "stderr", "eta"]
CURVE_TIME_HEADER = ["wallclock", "loss", "stderr"]
BOUND_HEADER = ["iteration", "wallclock", "bound"]


def emit_outputs(result: ExperimentResult, out_dir, formats=("csv", "plot")):
    """Write per-variant curve CSVs, bound overlays, summary.csv and SVG
    plots. Returns the list of written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    formats = set(formats)
    unknown = formats - {"csv", "plot"}
    if unknown:
        raise ConfigError([f"unknown output format(s): {sorted(unknown)}"])

    if "csv" in formats:
        for v in result.variants:
            if len(v.iterations):
                path = out / f"{v.label}__vs_iteration.csv"
                _write_csv(
                    path,
                    CURVE_ITER_HEADER,
                    zip(v.iterations, v.iter_wallclock_mean, v.iter_loss_mean,
                        v.iter_loss_stderr, v.iter_eta_mean),
                )
                written.append(path)
                path = out / f"{v.label}__vs_wallclock.csv"
                _write_csv(
                    path,
                    CURVE_TIME_HEADER,
                    zip(v.time_grid, v.time_loss_mean, v.time_loss_stderr),
                )
                written.append(path)
            if v.bound is not None:
                path = out / f"{v.label}__bound.csv"
                per_iter = v.theory_runtime if math.isfinite(v.theory_runtime) else v.runtime_mean
                js = np.arange(len(v.bound.values))
                _write_csv(path, BOUND_HEADER, zip(js, js * per_iter, v.bound.values))
                written.append(path)

        summary = out / "summary.csv"
        rows = [
            [
                v.label,
                v.config.wait_for,
                v.config.num_learners,
                v.config.minibatch,
                _nominal_eta(v.config.schedule),
                v.runtime_mean,
                v.runtime_stderr,
                v.theory_runtime,
                v.final_loss,
                v.bound_name,
            ]
            for v in result.variants
        ]
        _write_csv(summary, SUMMARY_HEADER, rows)
        written.append(summary)

    if "plot" in formats:
        written.extend(_plot(result, out))
    return written


def _plot(result: ExperimentResult, out: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for x_kind in ("wallclock", "iteration"):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        plotted = False
        for v in result.variants:
            if not len(v.iterations):
                continue
            if x_kind == "wallclock":
                x, y, err = v.time_grid, v.time_loss_mean, v.time_loss_stderr
            else:
                x, y, err = v.iterations, v.iter_loss_mean, v.iter_loss_stderr
            (line,) = ax.plot(x, y, label=v.label, drawstyle="steps-post")
            if np.all(np.isfinite(err)):
                ax.fill_between(x, y - 2 * err, y + 2 * err, alpha=0.2, color=line.get_color())
            if v.bound is not None:
                js = np.arange(len(v.bound.values))
                per_iter = v.theory_runtime if math.isfinite(v.theory_runtime) else v.runtime_mean
                bx = js * per_iter if x_kind == "wallclock" else js
                ax.plot(bx, v.bound.values, linestyle="--", color=line.get_color(),
                        alpha=0.7, label=f"{v.label} bound")
            plotted = True
        if not plotted:
            plt.close(fig)
            continue
        ax.set_yscale("log")
        ax.set_xlabel("wall-clock time" if x_kind == "wallclock" else "iteration")
        ax.set_ylabel("loss")
        ax.set_title(result.config.name)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out / f"loss_vs_{x_kind}.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written
