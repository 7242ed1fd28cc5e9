#!/usr/bin/env python3
"""Locate the fixed-rate stability threshold of fully asynchronous SGD on
the quadratic testbed by bisection, and freeze it into the test fixture.

The fixture records the largest rate found stable and the smallest found
divergent (for the pinned master seed), plus a test rate comfortably above
the threshold used by the stabilization acceptance check.
"""

import json
from pathlib import Path

import numpy as np

from sgdsim import (
    Exponential,
    FixedRate,
    Protocol,
    VariantConfig,
    make_quadratic,
    run,
)

MASTER_SEED = 20260809
LEARNERS = 8
ITERATIONS = 1500
DIM = 8
EIGENVALUES = np.linspace(1.0, 4.0, DIM)
SIGMA = 1.0


def diverges(eta: float) -> bool:
    objective = make_quadratic(DIM, EIGENVALUES, sigma=SIGMA)
    config = VariantConfig(
        protocol=Protocol.K_ASYNC,
        num_learners=LEARNERS,
        wait_for=1,
        minibatch=1,
        schedule=FixedRate(eta),
        iterations=ITERATIONS,
    )
    trace = run(config, objective, Exponential(1.0), MASTER_SEED,
                initial_params=np.ones(DIM))
    return trace.diverged


def main() -> None:
    lo, hi = 0.005, 0.64
    assert not diverges(lo), f"lower bracket eta={lo} already diverges"
    assert diverges(hi), f"upper bracket eta={hi} does not diverge"
    for _ in range(24):
        mid = 0.5 * (lo + hi)
        if diverges(mid):
            hi = mid
        else:
            lo = mid
    fixture = {
        "master_seed": MASTER_SEED,
        "learners": LEARNERS,
        "iterations": ITERATIONS,
        "dim": DIM,
        "eigenvalues": list(EIGENVALUES),
        "sigma": SIGMA,
        "stable_eta": lo,
        "divergent_eta": hi,
        "test_eta": round(1.25 * hi, 6),
    }
    out = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "divergence_threshold.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(fixture, indent=2) + "\n")
    print(json.dumps(fixture, indent=2))
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
