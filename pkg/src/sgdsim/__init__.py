"""sgdsim: discrete-event parameter-server simulator for distributed SGD.

Simulates the four gradient-aggregation protocols (wait-for-K synchronous
and asynchronous, per-learner and per-mini-batch), measures error-runtime
trade-offs under random straggler delays, and juxtaposes them against the
matching analytic runtime expectations and convergence bounds.
"""

from .distributions import (
    Deterministic,
    Exponential,
    HyperExponential,
    MonotonicityClass,
    Pareto,
    RuntimeDistribution,
    ShiftedExponential,
    classify_monotonicity,
    dist_from_spec,
    dist_to_spec,
    expected_order_statistic,
    harmonic_number,
    make_rng,
    mc_order_statistic,
    substream_seed,
)
from .objectives import (
    FixedRate,
    Objective,
    StalenessCompensatedRate,
    learning_rate,
    make_logistic,
    make_quadratic,
    objective_from_spec,
    schedule_from_spec,
)
from .simulator import (
    Protocol,
    SimTrace,
    TraceRecord,
    VariantConfig,
    measure_runtime_per_iteration,
    run,
    write_trace_csv,
)
from .theory import (
    BoundSeries,
    TheoryParams,
    bound_kasync,
    bound_ksync,
    bound_nonconvex,
    bound_variable_lr,
    estimate_gamma,
    estimate_p0,
    ratio_kasync_over_kbatchasync,
    speedup_log_approx,
    speedup_sync_over_async,
)

__version__ = "0.1.0"
