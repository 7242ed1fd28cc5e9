"""Analytic quantities for juxtaposing simulation against theory: expected
runtimes and speed-up ratios, convergence upper bounds for the aggregation
protocols, and estimators for the staleness coefficient and the
fresh-gradient probability that enter the asynchronous bounds.

The staleness coefficient gamma and the fresh-gradient lower bound p0 are
*inputs* to the bounds; the estimators exist to supply empirically
consistent values from simulated traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .distributions import (
    MonotonicityClass,
    RuntimeDistribution,
    classify_monotonicity,
    expected_order_statistic,
)
from .simulator import SYNCHRONOUS_PROTOCOLS, SimTrace
from .objectives import Objective

__all__ = [
    "TheoryParams",
    "BoundSeries",
    "StepSizeError",
    "bound_kasync",
    "bound_ksync",
    "bound_variable_lr",
    "bound_nonconvex",
    "speedup_sync_over_async",
    "speedup_log_approx",
    "RatioResult",
    "ratio_kasync_over_kbatchasync",
    "P0Estimate",
    "estimate_p0",
    "pooled_p0",
    "GammaEstimate",
    "estimate_gamma",
    "pooled_gamma",
]


class StepSizeError(ValueError):
    """A learning rate violates the step-size precondition of a bound."""


@dataclass(frozen=True)
class TheoryParams:
    """The constants entering the convergence bounds.

    gamma is the staleness coefficient (drift of stale gradients relative
    to fresh ones), p_zero the lower bound on the conditional probability
    that an applied gradient is fresh. gamma_prime = 1 - gamma + p_zero/2
    is derived, never stored.
    """

    eta: float
    smoothness: float        # L
    strong_convexity: float  # c
    noise_var: float         # sigma^2
    multiplicative_noise: float = 0.0  # M_G
    minibatch: int = 1       # m
    wait_for: int = 1        # K
    gamma: float = 0.0
    p_zero: float = 0.0
    schedule_scale: float = 0.0  # C of the staleness-compensated schedule
    max_eta: float = 0.0
    horizon: int = 1         # J

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not (0.0 <= self.p_zero <= 1.0):
            raise ValueError(f"p_zero must be in [0, 1], got {self.p_zero}")
        for name in ("eta", "smoothness", "strong_convexity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.noise_var < 0 or self.multiplicative_noise < 0:
            raise ValueError("noise scales must be >= 0")
        if self.minibatch < 1 or self.wait_for < 1 or self.horizon < 1:
            raise ValueError("minibatch, wait_for and horizon must be >= 1")

    @property
    def gamma_prime(self) -> float:
        return 1.0 - self.gamma + self.p_zero / 2.0

    def max_eta_kasync(self) -> float:
        """Step-size ceiling for the asynchronous fixed-rate bound."""
        km = self.wait_for * self.minibatch
        return 1.0 / (2.0 * self.smoothness * (self.multiplicative_noise / km + 1.0 / self.wait_for))

    def max_eta_ksync(self) -> float:
        """Step-size ceiling for the synchronous fixed-rate bound."""
        km = self.wait_for * self.minibatch
        return 1.0 / (2.0 * self.smoothness * (self.multiplicative_noise / km + 1.0))

    def max_eta_variable(self) -> float:
        """Per-iteration ceiling for the variable-rate bound."""
        return 1.0 / (2.0 * self.smoothness * (self.multiplicative_noise / self.minibatch + 1.0))


@dataclass(frozen=True)
class BoundSeries:
    """A per-iteration upper-bound trajectory b_0..b_J on E[F(w_j)] - F*.

    For the fixed-rate bounds the series is floor + decay^j (b_0 - floor);
    the variable-rate series carries its per-iteration decay factors rho_j
    and offsets delta_j plus the accumulated offset.
    """

    values: np.ndarray
    floor: float
    decay_factor: float | None = None
    rhos: np.ndarray | None = None
    deltas: np.ndarray | None = None
    delta_total: float | None = None

    @property
    def final(self) -> float:
        return float(self.values[-1])


def _geometric_series(f0_gap: float, floor: float, decay: float, horizon: int) -> np.ndarray:
    j = np.arange(horizon + 1)
    return floor + decay**j * (f0_gap - floor)


def bound_kasync(params: TheoryParams, f0_gap: float) -> BoundSeries:
    """Error bound for the asynchronous protocols at fixed rate:
    floor eta*L*sigma^2 / (2c*gamma'*K*m) and decay (1 - eta*c*gamma')."""
    ceiling = params.max_eta_kasync()
    if params.eta > ceiling:
        raise StepSizeError(
            f"asynchronous fixed-rate bound requires eta <= {ceiling:.6g}, got {params.eta:.6g}"
        )
    gp = params.gamma_prime
    if gp <= 0:
        raise StepSizeError(f"asynchronous bound requires gamma' > 0, got {gp:.6g}")
    km = params.wait_for * params.minibatch
    floor = params.eta * params.smoothness * params.noise_var / (
        2.0 * params.strong_convexity * gp * km
    )
    decay = 1.0 - params.eta * params.strong_convexity * gp
    return BoundSeries(
        values=_geometric_series(f0_gap, floor, decay, params.horizon),
        floor=floor,
        decay_factor=decay,
    )


def bound_ksync(params: TheoryParams, f0_gap: float) -> BoundSeries:
    """Error bound for the synchronous protocol: floor
    eta*L*sigma^2 / (2c*K*m) and decay (1 - eta*c), independent of K."""
    ceiling = params.max_eta_ksync()
    if params.eta > ceiling:
        raise StepSizeError(
            f"synchronous fixed-rate bound requires eta <= {ceiling:.6g}, got {params.eta:.6g}"
        )
    km = params.wait_for * params.minibatch
    floor = params.eta * params.smoothness * params.noise_var / (
        2.0 * params.strong_convexity * km
    )
    decay = 1.0 - params.eta * params.strong_convexity
    return BoundSeries(
        values=_geometric_series(f0_gap, floor, decay, params.horizon),
        floor=floor,
        decay_factor=decay,
    )


def bound_variable_lr(etas: Sequence[float], params: TheoryParams, f0_gap: float) -> BoundSeries:
    """Error bound under a per-iteration rate sequence constrained by the
    staleness budget eta_j * E||w_j - w_tau(j)||^2 <= C.

    Recursion b_{j+1} = (1 - rho_j) b_j + delta_j with
    rho_j = eta_j (1 + p0/2) c and delta_j = eta_j^2 L sigma^2/(2m) + C L^2/2.
    The additive accumulation is compensated (Kahan) since horizons can
    reach 1e5.
    """
    etas = np.asarray(etas, dtype=float)
    if etas.ndim != 1 or len(etas) == 0:
        raise ValueError("need a non-empty rate sequence")
    ceiling = params.max_eta_variable()
    bad = np.nonzero(etas > ceiling)[0]
    if len(bad):
        raise StepSizeError(
            f"variable-rate bound requires eta_j <= {ceiling:.6g}; "
            f"violated at index {int(bad[0])} (eta={etas[bad[0]]:.6g})"
        )
    if np.any(etas <= 0):
        raise ValueError("rates must be > 0")
    rhos = etas * (1.0 + params.p_zero / 2.0) * params.strong_convexity
    deltas = (
        etas**2 * params.smoothness * params.noise_var / (2.0 * params.minibatch)
        + params.schedule_scale * params.smoothness**2 / 2.0
    )
    values = np.empty(len(etas) + 1)
    values[0] = f0_gap
    b = float(f0_gap)
    comp_b = 0.0
    delta_acc = 0.0
    comp_d = 0.0
    for j, (rho, delta) in enumerate(zip(rhos, deltas)):
        scale = 1.0 - rho
        b *= scale
        comp_b *= scale
        y = delta - comp_b
        t = b + y
        comp_b = (t - b) - y
        b = t
        delta_acc *= scale
        comp_d *= scale
        y = delta - comp_d
        t = delta_acc + y
        comp_d = (t - delta_acc) - y
        delta_acc = t
        values[j + 1] = b
    return BoundSeries(
        values=values,
        floor=0.0,
        rhos=rhos,
        deltas=deltas,
        delta_total=delta_acc,
    )


def bound_nonconvex(params: TheoryParams, f0_gap: float, horizon: int) -> float:
    """Ergodic bound on the average squared gradient norm over horizon+1
    iterations: 2*f0_gap/((J+1)*eta*gamma') + L*eta*sigma^2/(K*m*gamma')."""
    gp = params.gamma_prime
    if gp <= 0:
        raise StepSizeError(f"nonconvex bound requires gamma' > 0, got {gp:.6g}")
    km = params.wait_for * params.minibatch
    return 2.0 * f0_gap / ((horizon + 1) * params.eta * gp) + (
        params.smoothness * params.eta * params.noise_var / (km * gp)
    )


# --- runtime ratios ---


def speedup_sync_over_async(
    dist: RuntimeDistribution,
    p: int,
    method: str = "analytic",
    samples: int = 100_000,
    rng=None,
) -> float:
    """Ratio of expected per-iteration runtimes, fully synchronous over
    fully asynchronous: P * E[X_{P:P}] / E[X]."""
    if p < 1:
        raise ValueError(f"need P >= 1, got {p}")
    return p * expected_order_statistic(dist, p, p, method=method, samples=samples, rng=rng) / dist.mean()


def speedup_log_approx(p: int) -> float:
    """The P*log(P) approximation of the exponential-service speed-up,
    exposed separately from the exact harmonic form."""
    if p < 1:
        raise ValueError(f"need P >= 1, got {p}")
    return p * math.log(p)


class RatioResult(NamedTuple):
    value: float
    exactness: str  # "exact" for memoryless service, "upper_bound" otherwise


def ratio_kasync_over_kbatchasync(
    dist: RuntimeDistribution,
    p: int,
    k: int,
    method: str = "analytic",
    samples: int = 100_000,
    rng=None,
) -> RatioResult:
    """P * E[X_{K:P}] / (K * E[X]), the per-iteration runtime ratio of the
    two asynchronous variants. Exact for memoryless service; an upper bound
    for new-longer-than-used laws (and flagged as such for every
    non-memoryless law)."""
    value = p * expected_order_statistic(dist, k, p, method=method, samples=samples, rng=rng) / (
        k * dist.mean()
    )
    exact = classify_monotonicity(dist) is MonotonicityClass.MEMORYLESS
    return RatioResult(value, "exact" if exact else "upper_bound")


# --- estimators ---


class P0Estimate(NamedTuple):
    value: float
    degenerate: bool  # True when the protocol has no staleness by construction


def _staleness_counts(trace: SimTrace):
    zero = 0
    total = 0
    for r in trace.records:
        zero += sum(1 for s in r.staleness if s == 0)
        total += len(r.staleness)
    return zero, total


def estimate_p0(trace: SimTrace, min_records: int = 1000) -> P0Estimate:
    """Empirical fraction of gradient contributions with zero staleness.

    This marginal frequency is a proxy for the conditional fresh-gradient
    probability the bounds use (the true p0 conditions on all past delays
    and parameters); no claim is made that the two coincide. Synchronous
    traces return 1.0 flagged degenerate.
    """
    if trace.config.protocol in SYNCHRONOUS_PROTOCOLS:
        return P0Estimate(1.0, True)
    if len(trace.records) < min_records:
        raise ValueError(
            f"need >= {min_records} records to estimate p0, trace has {len(trace.records)}"
        )
    zero, total = _staleness_counts(trace)
    return P0Estimate(zero / total, False)


def pooled_p0(traces: Sequence[SimTrace]) -> float:
    """Zero-staleness fraction pooled over several replications."""
    zero = 0
    total = 0
    for tr in traces:
        z, t = _staleness_counts(tr)
        zero += z
        total += t
    if total == 0:
        raise ValueError("no contributions in the supplied traces")
    return zero / total


class GammaEstimate(NamedTuple):
    value: float
    hypothesis_violated: bool  # True when the estimate exceeds 1


def _gamma_sums(trace: SimTrace, objective: Objective):
    if trace.snapshots is None:
        raise ValueError(
            "trace lacks parameter snapshots; re-run the simulation with keep_snapshots=True"
        )
    drift_sq = 0.0
    n_drift = 0
    grad_sq = 0.0
    n_grad = 0
    for params_before, reads in trace.snapshots:
        g_now = objective.grad(params_before)
        grad_sq += float(np.dot(g_now, g_now))
        n_grad += 1
        for w_read in reads:
            diff = g_now - objective.grad(w_read)
            drift_sq += float(np.dot(diff, diff))
            n_drift += 1
    return drift_sq, n_drift, grad_sq, n_grad


def estimate_gamma(trace: SimTrace, objective: Objective) -> GammaEstimate:
    """Smallest staleness coefficient consistent with the run: the ratio of
    the mean squared gradient drift ||grad F(w_j) - grad F(w_tau(l,j))||^2
    to the mean squared gradient norm ||grad F(w_j)||^2, both over the
    pre-update parameters. Values above 1 are reported as-is but flagged:
    the convergence hypothesis does not cover that regime."""
    drift_sq, n_drift, grad_sq, n_grad = _gamma_sums(trace, objective)
    if grad_sq == 0.0:
        return GammaEstimate(0.0, False)
    value = (drift_sq / n_drift) / (grad_sq / n_grad)
    return GammaEstimate(value, value > 1.0)


def pooled_gamma(traces: Sequence[SimTrace], objective: Objective) -> GammaEstimate:
    """Gamma estimate pooling drift and gradient sums over replications."""
    drift_sq = 0.0
    n_drift = 0
    grad_sq = 0.0
    n_grad = 0
    for tr in traces:
        d, nd, g, ng = _gamma_sums(tr, objective)
        drift_sq += d
        n_drift += nd
        grad_sq += g
        n_grad += ng
    if grad_sq == 0.0:
        return GammaEstimate(0.0, False)
    value = (drift_sq / n_drift) / (grad_sq / n_grad)
    return GammaEstimate(value, value > 1.0)
