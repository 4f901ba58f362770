"""Command-line entry point.

    attnlab <experiment> --config FILE [--trials N] [--seed S] [--workers W] [--out DIR]

Exit codes: 0 on success (and certification pass), 2 when a certification
verdict fails, 1 on configuration errors.
"""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, load_config
from .errors import AttnLabError, ConfigError
from .experiments import run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnlab",
        description="Monte Carlo laboratory for long-context softmax attention "
                    "with random spherical contexts.")
    parser.add_argument("experiment", choices=EXPERIMENTS,
                        help="named experiment to run")
    parser.add_argument("--config", required=True, help="TOML config file")
    parser.add_argument("--trials", type=int, default=None,
                        help="override the trial count")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the master seed")
    parser.add_argument("--workers", type=int, default=None,
                        help="override the worker count")
    parser.add_argument("--out", default=None, help="override the output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "experiment": args.experiment,
        "trials": args.trials,
        "master_seed": args.seed,
        "workers": args.workers,
        "output_dir": args.out,
    }
    try:
        cfg = load_config(args.config, overrides)
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except AttnLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in result.csv_paths:
        print(f"wrote {path}")
    if result.verdict_path is not None:
        print(f"wrote {result.verdict_path}")
        status = "PASS" if result.passed else "FAIL"
        print(f"certification: {status}")
        if not result.passed:
            return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
