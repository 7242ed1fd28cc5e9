"""Deterministic discrete-event simulation of one parameter server and P
learners running a distributed-SGD aggregation protocol.

Protocol semantics
------------------
All four protocols apply the same update once K gradient contributions are
in hand,

    w <- w - (eta / K) * sum_l g(w_read(l)),

and differ only in who computes where and what happens to stragglers:

* k_sync: all P learners start at the current w with fresh service draws;
  the server takes the first K completions (the iteration lasts the K-th
  order statistic of P draws), discards the in-flight remainder, and every
  learner refetches. All contributions are fresh.
* k_batch_sync: all P start at the current w; each completion contributes
  one mini-batch gradient at that same w and the learner immediately
  redraws without refetching. After K contributions the server updates,
  cancels in-flight work, and everyone restarts at the new w. All
  contributions are fresh.
* k_async: learners run continuously and in-flight residual service times
  are preserved across updates, never resampled. The server buffers
  completions in arrival order and updates on the K-th; only the K
  contributors refetch (they idle between completing and the update).
  Contributions carry the iteration index at which their learner last
  fetched, so they may be stale.
* k_batch_async: every completion is buffered immediately and the learner
  refetches the current w and redraws with no idling; every K buffered
  mini-batches trigger one update, irrespective of which learners they
  came from.

Determinism
-----------
Each learner owns one substream derived from (master seed, replication,
learner id); a run is a single-threaded event loop over a strict total
order (time, event kind, learner id), with completions at a timestamp
processed before refetches at the same timestamp. Identical
(config, seed) re-runs reproduce the trace bit-exactly. Ties only occur
for discrete service laws and resolve lowest-learner-id first.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .distributions import RuntimeDistribution, make_rng, substream_seed
from .objectives import LrSchedule, Objective, learning_rate

__all__ = [
    "Protocol",
    "VariantConfig",
    "TraceRecord",
    "SimTrace",
    "RuntimeEstimate",
    "run",
    "measure_runtime_per_iteration",
    "write_trace_csv",
    "read_trace_csv",
    "TRACE_CSV_HEADER",
    "DIVERGENCE_LIMIT",
]

DIVERGENCE_LIMIT = 1e12

TRACE_CSV_HEADER = [
    "iteration",
    "wallclock",
    "loss",
    "eta",
    "grad_norm",
    "max_staleness",
    "mean_staleness",
]


class Protocol(Enum):
    K_SYNC = "k_sync"
    K_BATCH_SYNC = "k_batch_sync"
    K_ASYNC = "k_async"
    K_BATCH_ASYNC = "k_batch_async"


SYNCHRONOUS_PROTOCOLS = (Protocol.K_SYNC, Protocol.K_BATCH_SYNC)


@dataclass(frozen=True)
class VariantConfig:
    """One protocol instance: wait for K of P learners (or mini-batches),
    mini-batch size m, learning-rate schedule, and horizon in updates.

    k_sync with K=P is fully synchronous SGD; k_batch_async with K=1 is
    fully asynchronous SGD.
    """

    protocol: Protocol
    num_learners: int
    wait_for: int
    minibatch: int
    schedule: LrSchedule
    iterations: int

    def __post_init__(self):
        if self.num_learners < 1:
            raise ValueError(f"need at least one learner, got {self.num_learners}")
        if not (1 <= self.wait_for <= self.num_learners):
            raise ValueError(
                f"need 1 <= K <= P, got K={self.wait_for}, P={self.num_learners}"
            )
        if self.minibatch < 1:
            raise ValueError(f"mini-batch size must be >= 1, got {self.minibatch}")
        if self.iterations < 1:
            raise ValueError(f"need at least one iteration, got {self.iterations}")


@dataclass(frozen=True)
class TraceRecord:
    """One parameter-server update: its index (1-based), the wall-clock time
    it was applied, the full-objective loss and gradient norm of the updated
    parameters, the rate used, and the staleness (in update counts) of each
    of the K contributions."""

    iteration: int
    wallclock: float
    loss: float
    eta: float
    grad_norm: float
    staleness: tuple


@dataclass
class SimTrace:
    records: list
    final_params: np.ndarray
    config: VariantConfig
    master_seed: int
    diverged: bool = False
    diverged_at: int | None = None
    # populated only with keep_snapshots: per update, the pre-update
    # parameters and the parameter snapshot each contribution was computed at
    snapshots: list | None = None

    def wallclocks(self) -> np.ndarray:
        return np.array([r.wallclock for r in self.records])

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def etas(self) -> np.ndarray:
        return np.array([r.eta for r in self.records])


class RuntimeEstimate(NamedTuple):
    mean: float
    stderr: float


class _Learner:
    """Mutable per-learner state: the substream, the fetched parameter
    snapshot, and the update count at fetch time."""

    __slots__ = ("rng", "read_iteration", "read_params")

    def __init__(self, rng):
        self.rng = rng
        self.read_iteration = 0
        self.read_params = None


class _Recorder:
    """Accumulates trace records and applies the divergence cutoff."""

    def __init__(self, objective, config, keep_snapshots):
        self.objective = objective
        self.config = config
        self.records = []
        self.snapshots = [] if keep_snapshots else None
        self.diverged = False
        self.diverged_at = None

    def record(self, count, clock, params, eta, staleness, params_before, contribution_reads):
        loss = self.objective.loss(params)
        grad_norm = float(np.linalg.norm(self.objective.grad(params)))
        self.records.append(
            TraceRecord(count, clock, loss, eta, grad_norm, tuple(staleness))
        )
        if self.snapshots is not None:
            self.snapshots.append((params_before, tuple(contribution_reads)))
        if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            self.diverged = True
            self.diverged_at = count
            return False
        return True


def run(
    config: VariantConfig,
    objective: Objective,
    dist: RuntimeDistribution,
    master_seed: int,
    initial_params: np.ndarray | None = None,
    replication: int = 0,
    keep_snapshots: bool = False,
) -> SimTrace:
    """Simulate `config.iterations` parameter-server updates.

    A run whose full-objective loss exceeds the divergence limit (or stops
    being finite) is truncated at the offending update and flagged, not
    raised. With keep_snapshots the trace retains the pre-update parameters
    and per-contribution read snapshots needed by the staleness-coefficient
    estimator.
    """
    if initial_params is None:
        w0 = np.ones(objective.dim)
    else:
        w0 = np.asarray(initial_params, dtype=float)
        if w0.shape != (objective.dim,):
            raise ValueError(f"initial params must have shape ({objective.dim},)")

    learners = [
        _Learner(make_rng(substream_seed(master_seed, replication, i)))
        for i in range(config.num_learners)
    ]
    recorder = _Recorder(objective, config, keep_snapshots)

    if config.protocol is Protocol.K_SYNC:
        final = _run_ksync(config, objective, dist, learners, w0, recorder)
    elif config.protocol is Protocol.K_BATCH_SYNC:
        final = _run_kbatchsync(config, objective, dist, learners, w0, recorder)
    elif config.protocol is Protocol.K_ASYNC:
        final = _run_kasync(config, objective, dist, learners, w0, recorder)
    elif config.protocol is Protocol.K_BATCH_ASYNC:
        final = _run_kbatchasync(config, objective, dist, learners, w0, recorder)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown protocol {config.protocol}")

    return SimTrace(
        records=recorder.records,
        final_params=final,
        config=config,
        master_seed=master_seed,
        diverged=recorder.diverged,
        diverged_at=recorder.diverged_at,
        snapshots=recorder.snapshots,
    )


def _apply_update(w, grads, schedule, staleness_sq, k):
    """One server update from K buffered gradients (summed in arrival
    order); the schedule sees the worst staleness drift among the K."""
    eta = learning_rate(schedule, max(staleness_sq) if staleness_sq else 0.0)
    total = grads[0].copy()
    for g in grads[1:]:
        total += g
    return w - (eta / k) * total, eta


def _run_ksync(config, objective, dist, learners, w0, recorder):
    p, k, m = config.num_learners, config.wait_for, config.minibatch
    w = w0.copy()
    clock = 0.0
    for count in range(1, config.iterations + 1):
        draws = [dist.sample(learner.rng) for learner in learners]
        order = sorted(range(p), key=lambda i: (draws[i], i))
        winners = order[:k]
        clock += draws[winners[-1]]  # K-th order statistic; the rest are cancelled
        grads = [objective.stochastic_grad(w, m, learners[i].rng) for i in winners]
        w_before = w
        w, eta = _apply_update(w, grads, config.schedule, [0.0] * k, k)
        if not recorder.record(count, clock, w, eta, [0] * k, w_before, [w_before] * k):
            break
    return w


def _run_kbatchsync(config, objective, dist, learners, w0, recorder):
    p, k, m = config.num_learners, config.wait_for, config.minibatch
    w = w0.copy()
    clock = 0.0
    for count in range(1, config.iterations + 1):
        heap = [(clock + dist.sample(learner.rng), i) for i, learner in enumerate(learners)]
        heapq.heapify(heap)
        grads = []
        t = clock
        while len(grads) < k:
            t, i = heapq.heappop(heap)
            grads.append(objective.stochastic_grad(w, m, learners[i].rng))
            # same w, next mini-batch; leftover work is cancelled at update
            heapq.heappush(heap, (t + dist.sample(learners[i].rng), i))
        clock = t
        w_before = w
        w, eta = _apply_update(w, grads, config.schedule, [0.0] * k, k)
        if not recorder.record(count, clock, w, eta, [0] * k, w_before, [w_before] * k):
            break
    return w


# event kinds: completions at a timestamp are processed before refetches at
# the same timestamp, so a learner restarting after an update observes every
# update applied at that instant (only discrete service laws ever tie)
_COMPLETION, _FETCH = 0, 1


def _run_kasync(config, objective, dist, learners, w0, recorder):
    p, k, m = config.num_learners, config.wait_for, config.minibatch
    w = w0.copy()
    count = 0
    events = []
    for i, learner in enumerate(learners):
        learner.read_iteration = 0
        learner.read_params = w
        heapq.heappush(events, (dist.sample(learner.rng), _COMPLETION, i))

    buffer_grads = []
    buffer_staleness = []
    buffer_drift = []
    buffer_reads = []
    contributors = []
    while count < config.iterations:
        t, kind, i = heapq.heappop(events)
        learner = learners[i]
        if kind == _FETCH:
            learner.read_iteration = count
            learner.read_params = w
            heapq.heappush(events, (t + dist.sample(learner.rng), _COMPLETION, i))
            continue
        buffer_grads.append(objective.stochastic_grad(learner.read_params, m, learner.rng))
        buffer_staleness.append(count - learner.read_iteration)
        diff = w - learner.read_params
        buffer_drift.append(float(np.dot(diff, diff)))
        buffer_reads.append(learner.read_params)
        contributors.append(i)
        if len(buffer_grads) < k:
            continue  # contributor idles until the K-th arrival
        w_before = w
        w, eta = _apply_update(w, buffer_grads, config.schedule, buffer_drift, k)
        count += 1
        ok = recorder.record(count, t, w, eta, buffer_staleness, w_before, buffer_reads)
        for j in contributors:
            heapq.heappush(events, (t, _FETCH, j))
        buffer_grads, buffer_staleness, buffer_drift = [], [], []
        buffer_reads, contributors = [], []
        if not ok:
            break
    return w


def _run_kbatchasync(config, objective, dist, learners, w0, recorder):
    p, k, m = config.num_learners, config.wait_for, config.minibatch
    w = w0.copy()
    count = 0
    events = []
    for i, learner in enumerate(learners):
        learner.read_iteration = 0
        learner.read_params = w
        heapq.heappush(events, (dist.sample(learner.rng), _COMPLETION, i))

    buffer_grads = []
    buffer_staleness = []
    buffer_drift = []
    buffer_reads = []
    while count < config.iterations:
        t, kind, i = heapq.heappop(events)
        learner = learners[i]
        if kind == _FETCH:
            learner.read_iteration = count
            learner.read_params = w
            heapq.heappush(events, (t + dist.sample(learner.rng), _COMPLETION, i))
            continue
        buffer_grads.append(objective.stochastic_grad(learner.read_params, m, learner.rng))
        buffer_staleness.append(count - learner.read_iteration)
        diff = w - learner.read_params
        buffer_drift.append(float(np.dot(diff, diff)))
        buffer_reads.append(learner.read_params)
        ok = True
        if len(buffer_grads) == k:
            w_before = w
            w, eta = _apply_update(w, buffer_grads, config.schedule, buffer_drift, k)
            count += 1
            ok = recorder.record(count, t, w, eta, buffer_staleness, w_before, buffer_reads)
            buffer_grads, buffer_staleness = [], []
            buffer_drift, buffer_reads = [], []
        # no idling: refetch whatever the server holds now and keep going
        heapq.heappush(events, (t, _FETCH, i))
        if not ok:
            break
    return w


def measure_runtime_per_iteration(trace: SimTrace, burn_in: int = 0) -> RuntimeEstimate:
    """Mean and standard error of the per-update wall-clock increments after
    discarding the first `burn_in` updates.

    Burn-in matters only for the asynchronous renewal limit; synchronous
    iteration times are already i.i.d. Requires at least 100 post-burn-in
    records.
    """
    times = trace.wallclocks()
    if burn_in >= len(times):
        raise ValueError(f"burn_in={burn_in} discards the whole trace of {len(times)} records")
    increments = np.diff(np.concatenate([[0.0], times]))[burn_in:]
    if len(increments) < 100:
        raise ValueError(
            f"insufficient data: {len(increments)} post-burn-in records, need >= 100"
        )
    mean = float(np.mean(increments))
    stderr = float(np.std(increments, ddof=1) / math.sqrt(len(increments)))
    return RuntimeEstimate(mean, stderr)


def _fmt(x: float) -> str:
    """Shortest round-trip decimal for a float."""
    return repr(float(x))


def trace_rows(trace: SimTrace):
    for r in trace.records:
        yield [
            str(r.iteration),
            _fmt(r.wallclock),
            _fmt(r.loss),
            _fmt(r.eta),
            _fmt(r.grad_norm),
            str(max(r.staleness)),
            _fmt(sum(r.staleness) / len(r.staleness)),
        ]


def write_trace_csv(trace: SimTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_CSV_HEADER)
        writer.writerows(trace_rows(trace))


def read_trace_csv(path) -> dict:
    """Parse a trace CSV back into column arrays (exact float round-trip)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_CSV_HEADER:
            raise ValueError(f"unexpected trace header {header}")
        cols = {name: [] for name in header}
        for row in reader:
            for name, cell in zip(header, row):
                cols[name].append(float(cell))
    return {name: np.array(vals) for name, vals in cols.items()}
