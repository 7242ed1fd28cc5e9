"""Objectives with known convexity constants, stochastic gradient oracles,
and learning-rate schedules.

The quadratic testbed satisfies the smoothness / strong-convexity /
unbiasedness / bounded-variance assumptions with exactly known constants,
so error floors can be compared against the convergence bounds without any
oracle noise. The synthetic logistic objective gets its constants from
conservative analytic bounds plus a deterministic full-batch descent run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

__all__ = [
    "Objective",
    "make_quadratic",
    "make_logistic",
    "logistic_from_arrays",
    "objective_from_spec",
    "gd_minimize",
    "FixedRate",
    "StalenessCompensatedRate",
    "LrSchedule",
    "learning_rate",
    "schedule_from_spec",
    "schedule_to_spec",
]


@dataclass(frozen=True)
class Objective:
    """A loss with gradient oracle, noise model, and known constants.

    loss / grad are full-objective callables of the parameter vector;
    stochastic_grad(w, minibatch, rng) draws one unbiased mini-batch
    gradient whose conditional variance is bounded by
    noise_var/m + (multiplicative_noise/m) * ||grad(w)||^2.
    """

    dim: int
    loss: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    stochastic_grad: Callable[[np.ndarray, int, np.random.Generator], np.ndarray]
    smoothness: float           # L
    strong_convexity: float     # c
    noise_var: float            # sigma^2
    multiplicative_noise: float  # M_G
    optimum_value: float        # F*
    minimizer: np.ndarray       # w*


def make_quadratic(
    dim: int,
    eigenvalues,
    sigma: float,
    multiplicative: float = 0.0,
) -> Objective:
    """Diagonal quadratic 0.5 * w^T diag(eigenvalues) w with w* = 0, F* = 0.

    The stochastic oracle adds Gaussian noise with per-coordinate variance
    (sigma^2 + multiplicative * ||grad||^2) / (m * dim), so the total
    variance meets the assumption bound with equality: sigma^2/m additive
    plus (multiplicative/m) * ||grad||^2. The default multiplicative = 0
    keeps sigma^2 exact; a positive value exercises the step-size
    conditions that involve M_G.
    """
    eig = np.asarray(eigenvalues, dtype=float)
    if eig.shape != (dim,):
        raise ValueError(f"need {dim} eigenvalues, got shape {eig.shape}")
    if np.any(eig <= 0):
        raise ValueError(f"eigenvalues must be strictly positive, got {eigenvalues}")
    if sigma < 0 or multiplicative < 0:
        raise ValueError("noise scales must be >= 0")

    def loss(w):
        return 0.5 * float(np.dot(eig * w, w))

    def grad(w):
        return eig * w

    def stochastic_grad(w, m, rng):
        g = eig * w
        scale_sq = sigma * sigma
        if multiplicative > 0:
            scale_sq += multiplicative * float(np.dot(g, g))
        noise = rng.normal(size=dim) * math.sqrt(scale_sq / (m * dim))
        return g + noise

    return Objective(
        dim=dim,
        loss=loss,
        grad=grad,
        stochastic_grad=stochastic_grad,
        smoothness=float(np.max(eig)),
        strong_convexity=float(np.min(eig)),
        noise_var=sigma * sigma,
        multiplicative_noise=multiplicative,
        optimum_value=0.0,
        minimizer=np.zeros(dim),
    )


def gd_minimize(
    loss: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    w0: np.ndarray,
    step: float,
    grad_tol: float = 1e-8,
    max_iters: int = 200_000,
) -> np.ndarray:
    """Deterministic full-batch gradient descent to ||grad|| <= grad_tol.

    Used as the optimum oracle for objectives without a closed-form
    minimizer; also doubles as the sanity harness for gradient code.
    """
    w = np.array(w0, dtype=float)
    for _ in range(max_iters):
        g = grad(w)
        if float(np.linalg.norm(g)) <= grad_tol:
            return w
        w = w - step * g
    raise RuntimeError(f"gradient descent did not reach ||grad|| <= {grad_tol} in {max_iters} iterations")


def logistic_from_arrays(features: np.ndarray, labels: np.ndarray, reg: float,
                         fit_seed: int = 0) -> Objective:
    """Binary logistic regression with L2 penalty reg * ||w||^2.

    labels must be +/-1. Constants: c = 2*reg from the penalty term;
    L = 2*reg + max_i ||x_i||^2 / 4 bounds the data-term Hessian by the
    worst row norm. F* and w* come from a full-batch descent run to
    ||grad|| <= 1e-8; sigma^2 and M_G are fitted as the smallest constants
    satisfying the variance bound over a deterministic grid of parameter
    points (sigma^2 pinned at w* where the gradient term vanishes, then the
    minimal slope M_G that covers the rest of the grid).
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if reg <= 0:
        raise ValueError(f"regularizer must be > 0, got {reg}")
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("features must be (n, dim) with one +/-1 label per row")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +/-1")
    n, dim = x.shape

    def loss(w):
        margins = y * (x @ w)
        # log1p(exp(-t)) computed stably for both signs of t
        per_sample = np.logaddexp(0.0, -margins)
        return float(np.mean(per_sample) + reg * np.dot(w, w))

    def _sigmoid(t):
        return 0.5 * (1.0 + np.tanh(0.5 * t))

    def grad(w):
        margins = y * (x @ w)
        coeff = -y * _sigmoid(-margins)
        return x.T @ coeff / n + 2.0 * reg * w

    def _per_sample_grads(w):
        margins = y * (x @ w)
        coeff = -y * _sigmoid(-margins)
        return x * coeff[:, None]  # data term only; the penalty is deterministic

    def stochastic_grad(w, m, rng):
        idx = rng.integers(0, n, size=m)
        margins = y[idx] * (x[idx] @ w)
        coeff = -y[idx] * _sigmoid(-margins)
        return x[idx].T @ coeff / m + 2.0 * reg * w

    smoothness = 2.0 * reg + 0.25 * float(np.max(np.sum(x * x, axis=1)))
    strong_convexity = 2.0 * reg

    w_star = gd_minimize(loss, grad, np.zeros(dim), step=1.0 / smoothness)
    f_star = loss(w_star)

    # smallest constants satisfying the variance bound on a seeded w-grid
    def _sampling_var(w):
        g_data = _per_sample_grads(w)
        mean_g = g_data.mean(axis=0)
        return float(np.mean(np.sum((g_data - mean_g) ** 2, axis=1)))

    fit_rng = np.random.Generator(np.random.PCG64(fit_seed))
    probes = [w_star] + [
        w_star + r * fit_rng.normal(size=dim) / math.sqrt(dim)
        for r in (0.25, 0.5, 1.0, 2.0, 4.0)
        for _ in range(4)
    ]
    noise_var = _sampling_var(w_star)
    m_g = 0.0
    for w in probes[1:]:
        g_norm_sq = float(np.dot(grad(w), grad(w)))
        excess = _sampling_var(w) - noise_var
        if excess > 0 and g_norm_sq > 0:
            m_g = max(m_g, excess / g_norm_sq)

    return Objective(
        dim=dim,
        loss=loss,
        grad=grad,
        stochastic_grad=stochastic_grad,
        smoothness=smoothness,
        strong_convexity=strong_convexity,
        noise_var=noise_var,
        multiplicative_noise=m_g,
        optimum_value=f_star,
        minimizer=w_star,
    )


def make_logistic(n_samples: int, dim: int, reg: float, data_seed: int = 0) -> Objective:
    """Synthetic two-cluster binary logistic regression.

    Rows are Gaussian around +/-mu with unit covariance; labels follow the
    cluster. Constants and the optimum are derived in logistic_from_arrays.
    """
    rng = np.random.Generator(np.random.PCG64(data_seed))
    center = np.ones(dim) / math.sqrt(dim)
    half = n_samples // 2
    labels = np.concatenate([np.ones(half), -np.ones(n_samples - half)])
    features = labels[:, None] * center[None, :] + rng.normal(size=(n_samples, dim))
    return logistic_from_arrays(features, labels, reg, fit_seed=data_seed)


def objective_from_spec(spec: dict) -> Objective:
    """Build an objective from a tagged record.

    {"objective": "quadratic", "dim": d, "eigenvalues": [...], "sigma": s}
    or
    {"objective": "logistic", "n_samples": n, "dim": d, "lambda": l,
     "data_seed": seed}
    """
    if not isinstance(spec, dict) or "objective" not in spec:
        raise ValueError(f"objective spec must be a mapping with an 'objective' tag, got {spec!r}")
    kind = spec["objective"]
    if kind == "quadratic":
        return make_quadratic(
            dim=int(spec["dim"]),
            eigenvalues=spec["eigenvalues"],
            sigma=float(spec["sigma"]),
            multiplicative=float(spec.get("multiplicative", 0.0)),
        )
    if kind == "logistic":
        return make_logistic(
            n_samples=int(spec["n_samples"]),
            dim=int(spec["dim"]),
            reg=float(spec["lambda"]),
            data_seed=int(spec.get("data_seed", 0)),
        )
    raise ValueError(f"unknown objective kind {kind!r}")


# --- learning-rate schedules ---


@dataclass(frozen=True)
class FixedRate:
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"learning rate must be > 0, got {self.eta}")


@dataclass(frozen=True)
class StalenessCompensatedRate:
    """Staleness-compensated schedule: eta_j = min(scale / ||w_j - w_tau||^2,
    max_eta). Zero staleness makes the first arm +inf, so the rate is
    max_eta; large parameter drift scales the rate down."""

    scale: float
    max_eta: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        if not self.max_eta > 0:
            raise ValueError(f"max_eta must be > 0, got {self.max_eta}")


LrSchedule = Union[FixedRate, StalenessCompensatedRate]


def learning_rate(schedule: LrSchedule, staleness_sq_norm: float) -> float:
    """Rate emitted for one update given ||w_j - w_tau(j)||^2."""
    if staleness_sq_norm < 0:
        raise ValueError(f"staleness norm must be >= 0, got {staleness_sq_norm}")
    if isinstance(schedule, FixedRate):
        return schedule.eta
    if staleness_sq_norm == 0.0:
        return schedule.max_eta
    return min(schedule.scale / staleness_sq_norm, schedule.max_eta)


def schedule_from_spec(spec: dict) -> LrSchedule:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError(f"schedule spec must be a mapping with a 'kind' tag, got {spec!r}")
    kind = spec["kind"]
    if kind == "fixed":
        return FixedRate(eta=float(spec["eta"]))
    if kind == "staleness_compensated":
        return StalenessCompensatedRate(scale=float(spec["scale"]), max_eta=float(spec["max_eta"]))
    raise ValueError(f"unknown schedule kind {kind!r}")


def schedule_to_spec(schedule: LrSchedule) -> dict:
    if isinstance(schedule, FixedRate):
        return {"kind": "fixed", "eta": schedule.eta}
    return {"kind": "staleness_compensated", "scale": schedule.scale, "max_eta": schedule.max_eta}
