"""Command-line entry point.

    sgdsim run <config.yaml> [--out DIR] [--seed N] [--workers N] [--formats csv,plot]
    sgdsim sweep <config.yaml> --axis K --values 1,2,4,8 [...]
    sgdsim theory speedup --dist '{"kind": "exponential", "rate": 1.0}' --p-max 64

Exit codes: 0 success, 2 config/validation error, 3 completed with
divergence flags. SGDSIM_WORKERS overrides any worker-count argument.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from .distributions import (
    UnsupportedAnalyticError,
    dist_from_spec,
    make_rng,
)
from .experiments import ConfigError, emit_outputs, load_config, run_experiment, sweep
from .theory import speedup_log_approx, speedup_sync_over_async


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgdsim")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", type=Path, help="experiment config (YAML)")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--workers", type=int, default=1, help="parallel replications")
        p.add_argument("--formats", default="csv,plot", help="comma-separated: csv,plot")

    p_run = sub.add_parser("run", help="run an experiment config")
    add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="run a config once per axis value")
    add_common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=["K", "m", "eta"])
    p_sweep.add_argument("--values", required=True, help="comma-separated axis values")

    p_theory = sub.add_parser("theory", help="analytic quantities")
    theory_sub = p_theory.add_subparsers(dest="theory_command", required=True)
    p_speed = theory_sub.add_parser(
        "speedup", help="fully-sync over fully-async runtime ratio vs P"
    )
    p_speed.add_argument(
        "--dist", required=True,
        help='tagged JSON record, e.g. {"kind": "pareto", "shape": 2, "scale": 1}',
    )
    p_speed.add_argument("--p-max", type=int, default=64)
    p_speed.add_argument("--samples", type=int, default=100_000)
    p_speed.add_argument("--seed", type=int, default=0)
    p_speed.add_argument("--out", type=Path, default=None, help="write CSV here instead of stdout")
    return parser


def _parse_formats(text: str):
    return tuple(f.strip() for f in text.split(",") if f.strip())


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    out_dir = args.out or config.output_dir or f"out_{config.name}"
    result = run_experiment(config, workers=args.workers)
    written = emit_outputs(result, out_dir, formats=_parse_formats(args.formats))
    for path in written:
        print(path)
    if result.any_divergence:
        flagged = {v.label: list(v.diverged_reps) for v in result.variants if v.diverged_reps}
        print(f"divergence flagged: {flagged}", file=sys.stderr)
        return 3
    return 0


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    typed = [int(v) if args.axis in ("K", "m") else float(v) for v in values]
    out_root = Path(args.out or config.output_dir or f"out_{config.name}")
    results = sweep(config, args.axis, typed, workers=args.workers)
    diverged = False
    for res in results:
        written = emit_outputs(res, out_root / res.config.name, formats=_parse_formats(args.formats))
        for path in written:
            print(path)
        diverged = diverged or res.any_divergence
    return 3 if diverged else 0


def _cmd_theory_speedup(args) -> int:
    try:
        spec = json.loads(args.dist)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"--dist is not valid JSON: {exc}"])
    dist = dist_from_spec(spec)
    ps = []
    p = 2
    while p <= args.p_max:
        ps.append(p)
        p *= 2
    rng = make_rng(args.seed)
    lines = ["P,speedup,method,p_log_p"]
    for p in ps:
        try:
            value = speedup_sync_over_async(dist, p)
            method = "analytic"
        except UnsupportedAnalyticError:
            value = speedup_sync_over_async(
                dist, p, method="monte_carlo", samples=args.samples, rng=rng
            )
            method = "monte_carlo"
        lines.append(f"{p},{value!r},{method},{speedup_log_approx(p)!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
        print(args.out)
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "theory":
            return _cmd_theory_speedup(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(exc, file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
