"""Service-time distributions for learner compute times.

Each distribution models the wall-clock time a learner needs to process one
mini-batch. All kinds expose exact closed-form means, vectorized sampling
from a caller-owned ``numpy.random.Generator``, and survival functions used
by the aging-class checker. Draws are i.i.d. across mini-batches and
learners by construction: every learner owns an independent substream
derived from the master seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Union

import numpy as np

__all__ = [
    "Deterministic",
    "Exponential",
    "ShiftedExponential",
    "Pareto",
    "HyperExponential",
    "RuntimeDistribution",
    "MonotonicityClass",
    "MonteCarloEstimate",
    "UnsupportedAnalyticError",
    "harmonic_number",
    "analytic_order_statistic",
    "mc_order_statistic",
    "expected_order_statistic",
    "order_statistic_log_approx",
    "classify_monotonicity",
    "dist_from_spec",
    "dist_to_spec",
    "mix64",
    "substream_seed",
    "make_rng",
]

_WEIGHT_TOL = 1e-12


class UnsupportedAnalyticError(ValueError):
    """Raised when a closed-form order statistic is requested for a
    distribution that has none wired in."""


@dataclass(frozen=True)
class Deterministic:
    """Point mass: every mini-batch takes exactly ``value`` time units."""

    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError(f"deterministic value must be > 0, got {self.value}")

    def mean(self) -> float:
        return self.value

    def sample(self, rng: np.random.Generator, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)

    def survival(self, x):
        return np.where(np.asarray(x) < self.value, 1.0, 0.0)


@dataclass(frozen=True)
class Exponential:
    """Exponential service time with rate ``rate`` (mean 1/rate)."""

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"exponential rate must be > 0, got {self.rate}")

    def mean(self) -> float:
        return 1.0 / self.rate

    def sample(self, rng: np.random.Generator, size=None):
        return rng.exponential(scale=1.0 / self.rate, size=size)

    def survival(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= 0, 1.0, np.exp(-self.rate * np.clip(x, 0, None)))


@dataclass(frozen=True)
class ShiftedExponential:
    """Constant setup time ``shift`` plus an exponential tail with rate
    ``rate``; the Appendix-E style m + exp(mu) model."""

    shift: float
    rate: float

    def __post_init__(self):
        if not self.shift > 0:
            raise ValueError(f"shift must be > 0, got {self.shift}")
        if not self.rate > 0:
            raise ValueError(f"rate must be > 0, got {self.rate}")

    def mean(self) -> float:
        return self.shift + 1.0 / self.rate

    def sample(self, rng: np.random.Generator, size=None):
        return self.shift + rng.exponential(scale=1.0 / self.rate, size=size)

    def survival(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= self.shift, 1.0, np.exp(-self.rate * np.clip(x - self.shift, 0, None)))


@dataclass(frozen=True)
class Pareto:
    """Classical Pareto on [scale, inf) with tail index ``shape``.

    shape <= 1 is rejected: the mean would be infinite and none of the
    runtime results apply.
    """

    shape: float
    scale: float

    def __post_init__(self):
        if not self.shape > 1:
            raise ValueError(f"pareto shape must be > 1 for a finite mean, got {self.shape}")
        if not self.scale > 0:
            raise ValueError(f"pareto scale must be > 0, got {self.scale}")

    def mean(self) -> float:
        return self.shape * self.scale / (self.shape - 1.0)

    def sample(self, rng: np.random.Generator, size=None):
        # numpy's pareto() is the Lomax form X/scale - 1 of the classical law
        return self.scale * (1.0 + rng.pareto(self.shape, size=size))

    def survival(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= self.scale, 1.0, (self.scale / np.clip(x, self.scale, None)) ** self.shape)


@dataclass(frozen=True)
class HyperExponential:
    """Mixture of exponentials: component i fires with probability
    weights[i] and then runs at rate rates[i]."""

    weights: tuple
    rates: tuple

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if len(self.weights) != len(self.rates) or not self.weights:
            raise ValueError("weights and rates must be non-empty and the same length")
        if any(w <= 0 for w in self.weights):
            raise ValueError(f"weights must all be > 0, got {self.weights}")
        if any(r <= 0 for r in self.rates):
            raise ValueError(f"rates must all be > 0, got {self.rates}")
        if abs(math.fsum(self.weights) - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1 within {_WEIGHT_TOL}, got {math.fsum(self.weights)}")

    def mean(self) -> float:
        return math.fsum(w / r for w, r in zip(self.weights, self.rates))

    def sample(self, rng: np.random.Generator, size=None):
        rates = np.asarray(self.rates)
        if size is None:
            component = rng.choice(len(rates), p=self.weights)
            return rng.exponential(scale=1.0 / rates[component])
        component = rng.choice(len(rates), p=self.weights, size=size)
        return rng.exponential(scale=1.0 / rates[component])

    def survival(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0, None)
        terms = [w * np.exp(-r * x) for w, r in zip(self.weights, self.rates)]
        return sum(terms)


RuntimeDistribution = Union[
    Deterministic, Exponential, ShiftedExponential, Pareto, HyperExponential
]


class MonotonicityClass(Enum):
    """Stochastic aging class of a service-time law.

    New-longer-than-used: Pr(U > u+t | U > t) <= Pr(U > u) for all t, u >= 0,
    i.e. in-flight work is stochastically closer to completion than a fresh
    draw. New-shorter-than-used reverses the inequality. Memoryless laws
    satisfy both with equality.
    """

    NEW_LONGER_THAN_USED = "new_longer_than_used"
    NEW_SHORTER_THAN_USED = "new_shorter_than_used"
    MEMORYLESS = "memoryless"
    UNKNOWN = "unknown"


class MonteCarloEstimate(NamedTuple):
    value: float
    stderr: float


def harmonic_number(n: int) -> float:
    """Exact H_n = sum_{i=1}^{n} 1/i (never the log approximation)."""
    if n < 0:
        raise ValueError(f"harmonic number needs n >= 0, got {n}")
    return float(np.sum(1.0 / np.arange(1, n + 1)))


def _check_order_args(k: int, p: int):
    if not (1 <= k <= p):
        raise ValueError(f"need 1 <= K <= P, got K={k}, P={p}")


def analytic_order_statistic(dist: RuntimeDistribution, k: int, p: int) -> float:
    """Closed-form E[X_{K:P}]; available for Exponential and Deterministic.

    For exponential service the K-th order statistic decomposes into a sum
    of independent exponentials with rates P*mu, (P-1)*mu, ..., (P-K+1)*mu,
    so the expectation is (H_P - H_{P-K}) / mu with exact harmonic numbers.
    """
    _check_order_args(k, p)
    if isinstance(dist, Deterministic):
        return dist.value
    if isinstance(dist, Exponential):
        return (harmonic_number(p) - harmonic_number(p - k)) / dist.rate
    raise UnsupportedAnalyticError(
        f"no closed-form order statistic for {type(dist).__name__}; use method='monte_carlo'"
    )


def mc_order_statistic(
    dist: RuntimeDistribution,
    k: int,
    p: int,
    samples: int = 100_000,
    rng: np.random.Generator | None = None,
    chunk: int = 200_000,
) -> MonteCarloEstimate:
    """Monte-Carlo E[X_{K:P}]: sort P draws per replication, average the
    K-th smallest. Returns the estimate with its standard error."""
    _check_order_args(k, p)
    if samples < 2:
        raise ValueError("need at least 2 samples for a standard error")
    rng = rng if rng is not None else make_rng(0)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        draws = dist.sample(rng, size=(n, p))
        kth = np.partition(draws, k - 1, axis=1)[:, k - 1]
        total += float(np.sum(kth))
        total_sq += float(np.sum(kth * kth))
        done += n
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0) * samples / (samples - 1)
    return MonteCarloEstimate(mean, math.sqrt(var / samples))


def expected_order_statistic(
    dist: RuntimeDistribution,
    k: int,
    p: int,
    method: str = "analytic",
    samples: int = 100_000,
    rng: np.random.Generator | None = None,
) -> float:
    """E[X_{K:P}] via the requested method ('analytic' or 'monte_carlo')."""
    if method == "analytic":
        return analytic_order_statistic(dist, k, p)
    if method == "monte_carlo":
        return mc_order_statistic(dist, k, p, samples=samples, rng=rng).value
    raise ValueError(f"unknown method {method!r}")


def order_statistic_log_approx(dist: Exponential, k: int, p: int) -> float:
    """The log-form approximation of E[X_{K:P}] for exponential service:
    log(P/(P-K))/mu, or log(P)/mu when K = P.

    Kept separate from the exact harmonic sums so the two are never
    conflated: the approximation carries O(1/P) error.
    """
    _check_order_args(k, p)
    if not isinstance(dist, Exponential):
        raise UnsupportedAnalyticError("log approximation applies to exponential service only")
    if k == p:
        return math.log(p) / dist.rate
    return math.log(p / (p - k)) / dist.rate


_ANALYTIC_CLASS = {
    Exponential: MonotonicityClass.MEMORYLESS,
    HyperExponential: MonotonicityClass.NEW_SHORTER_THAN_USED,
    ShiftedExponential: MonotonicityClass.NEW_LONGER_THAN_USED,
}


def classify_monotonicity(
    dist: RuntimeDistribution,
    grid: np.ndarray | None = None,
    tol: float = 1e-9,
) -> MonotonicityClass:
    """Aging class of the law, analytic where known, else a survival-grid check.

    Exponential is memoryless; a mixture of exponentials is
    new-shorter-than-used; a positive shift plus exponential is
    new-longer-than-used. Other kinds are checked numerically on a
    t, u grid in [0.1, 10]: if Pr(U>u+t|U>t) <= Pr(U>u) uniformly the law
    is new-longer-than-used, if >= uniformly it is new-shorter-than-used,
    and UNKNOWN if neither inequality holds everywhere.
    """
    for kind, cls in _ANALYTIC_CLASS.items():
        if isinstance(dist, kind):
            return cls
    if grid is None:
        grid = np.linspace(0.1, 10.0, 100)
    t = grid[:, None]
    u = grid[None, :]
    s_t = dist.survival(t)
    cond = np.where(s_t > 0, dist.survival(u + t) / np.where(s_t > 0, s_t, 1.0), np.nan)
    uncond = dist.survival(u) * np.ones_like(cond)
    valid = ~np.isnan(cond)
    longer = bool(np.all(cond[valid] <= uncond[valid] + tol))
    shorter = bool(np.all(cond[valid] >= uncond[valid] - tol))
    if longer and shorter:
        return MonotonicityClass.MEMORYLESS
    if longer:
        return MonotonicityClass.NEW_LONGER_THAN_USED
    if shorter:
        return MonotonicityClass.NEW_SHORTER_THAN_USED
    return MonotonicityClass.UNKNOWN


# --- tagged-record serialization (experiment config files) ---

_KINDS = {
    "deterministic": (Deterministic, ("value",)),
    "exponential": (Exponential, ("rate",)),
    "shifted_exponential": (ShiftedExponential, ("shift", "rate")),
    "pareto": (Pareto, ("shape", "scale")),
    "hyper_exponential": (HyperExponential, ("weights", "rates")),
}


def dist_from_spec(spec: dict) -> RuntimeDistribution:
    """Build a distribution from a tagged record, e.g.
    {"kind": "pareto", "shape": 2.0, "scale": 1.0}."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError(f"distribution spec must be a mapping with a 'kind' tag, got {spec!r}")
    kind = spec["kind"]
    if kind not in _KINDS:
        raise ValueError(f"unknown distribution kind {kind!r}; expected one of {sorted(_KINDS)}")
    cls, fields = _KINDS[kind]
    missing = [f for f in fields if f not in spec]
    if missing:
        raise ValueError(f"distribution spec {kind!r} missing fields {missing}")
    extra = set(spec) - set(fields) - {"kind"}
    if extra:
        raise ValueError(f"distribution spec {kind!r} has unknown fields {sorted(extra)}")
    return cls(**{f: spec[f] for f in fields})


def dist_to_spec(dist: RuntimeDistribution) -> dict:
    for kind, (cls, fields) in _KINDS.items():
        if isinstance(dist, cls):
            out = {"kind": kind}
            for f in fields:
                v = getattr(dist, f)
                out[f] = list(v) if isinstance(v, tuple) else v
            return out
    raise TypeError(f"not a runtime distribution: {dist!r}")


# --- deterministic stream splitting ---
#
# Rule: substream seed = mix64(mix64(master ^ mix64(R + replication))
#                              ^ mix64(L + learner))
# where mix64 is the splitmix64 finalizer and R, L are fixed salts. The mix
# decorrelates (replication, learner) pairs so traces are bit-reproducible
# and replications can run in any order.

_MASK = (1 << 64) - 1
_REPLICATION_SALT = 0x9E3779B97F4A7C15
_LEARNER_SALT = 0xD1B54A32D192ED03


def mix64(z: int) -> int:
    """splitmix64 finalizer: a 64-bit bijective mix."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def substream_seed(master_seed: int, replication: int, learner: int) -> int:
    """64-bit seed for one learner's stream in one replication."""
    z = mix64((master_seed & _MASK) ^ mix64(_REPLICATION_SALT + replication))
    return mix64(z ^ mix64(_LEARNER_SALT + learner))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))
