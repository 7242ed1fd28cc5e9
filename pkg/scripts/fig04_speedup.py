#!/usr/bin/env python3
"""Speed-up of fully asynchronous over fully synchronous SGD as the learner
count grows, for exponential, shifted-exponential and Pareto service times.

Writes one CSV per distribution (columns P,speedup,method,p_log_p) under
out_fig04/, mirroring the `sgdsim theory speedup` subcommand.
"""

import sys
from pathlib import Path

from sgdsim.cli import main as cli_main

DISTS = {
    "exp1": '{"kind": "exponential", "rate": 1.0}',
    "shifted_exp": '{"kind": "shifted_exponential", "shift": 1.0, "rate": 1.0}',
    "pareto_2_1": '{"kind": "pareto", "shape": 2.0, "scale": 1.0}',
}


def main() -> int:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out_fig04")
    for name, spec in DISTS.items():
        rc = cli_main([
            "theory", "speedup",
            "--dist", spec,
            "--p-max", "64",
            "--samples", "200000",
            "--seed", "20260809",
            "--out", str(out_dir / f"speedup_{name}.csv"),
        ])
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
