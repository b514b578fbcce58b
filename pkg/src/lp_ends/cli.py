"""Command line entry point: ``lp-ends run`` and ``lp-ends validate``."""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigError
from .harness import SUITES, load_config, run_experiment


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lp-ends", description="Run numerical verification suites on warped ends.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a suite and write report.csv and report.json")
    run.add_argument("--config", required=True, help="JSON experiment config")
    run.add_argument("--suite", required=True, choices=SUITES + ("all",))
    run.add_argument("--seed", type=int, default=None, help="override the config seed (u64)")
    run.add_argument("--out", default=None, help="output directory (default: config 'output')")
    val = sub.add_parser("validate", help="check a config without running anything")
    val.add_argument("--config", required=True)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok")
            return 0
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        out = args.out or cfg.output
        rows = run_experiment(cfg, args.suite, out_dir=out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    failing = [r for r in rows if not r.passed]
    print(f"{len(rows) - len(failing)}/{len(rows)} rows pass; report written to {out}")
    for r in failing:
        print(f"FAIL {r.suite} {r.warp} {r.param_name}={r.param_value} {r.quantity} = {r.value:.6g} (threshold {r.threshold:.6g})")
    return 0 if not failing else 1


if __name__ == "__main__":
    sys.exit(main())
