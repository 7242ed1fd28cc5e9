#!/usr/bin/env python3
"""Run every shipped figure recipe into out_figures/.

Desk-scale: the full set completes in a few minutes on one machine. Pass a
different output root as the first argument if desired.
"""

import subprocess
import sys
from pathlib import Path

from sgdsim.cli import main as cli_main

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out_figures")
    configs = ROOT / "configs"
    rc = subprocess.call(
        [sys.executable, str(ROOT / "scripts" / "fig04_speedup.py"), str(out / "fig04")]
    )
    if rc:
        return rc
    for name in (
        "fig05_pareto",
        "fig05_shifted_exp",
        "fig06_error_runtime",
        "fig08_variable_lr",
        "fig09_kasync_vs_kbatchasync",
    ):
        rc = cli_main(["run", str(configs / f"{name}.yaml"), "--out", str(out / name)])
        if rc not in (0, 3):  # fig08's fixed-rate arm is meant to diverge
            return rc
    rc = cli_main([
        "sweep", str(configs / "fig10_11_ksweep.yaml"),
        "--axis", "K", "--values", "1,2,4,8",
        "--out", str(out / "fig10_11_ksweep"),
    ])
    if rc not in (0, 3):
        return rc
    rc = cli_main([
        "sweep", str(configs / "fig12_13_msweep.yaml"),
        "--axis", "m", "--values", "1,4,16,64",
        "--out", str(out / "fig12_13_msweep"),
    ])
    return 0 if rc in (0, 3) else rc


if __name__ == "__main__":
    raise SystemExit(main())
