"""Command line entry point.

    csmspec simulate|pipeline|adiabatic|skeleton|metrics --config <path> --out <dir> [--seed N] [--workers N]

Exit codes: 0 success, 2 configuration or input error, 3 pipeline stage
failure (the failing stage is named on stderr).
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import ConfigError, StageError
from .pipeline import run_adiabatic, run_metrics, run_pipeline, run_simulate, run_skeleton

COMMANDS = {
    "simulate": run_simulate,
    "pipeline": run_pipeline,
    "adiabatic": run_adiabatic,
    "skeleton": run_skeleton,
    "metrics": run_metrics,
}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csmspec",
        description="Spectral workbench for continuous state machines",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="path to the JSON run configuration")
        cmd.add_argument("--out", required=True, help="output directory for artifacts")
        cmd.add_argument("--seed", type=int, default=None, help="override the config master seed")
        cmd.add_argument("--workers", type=int, default=None, help="override the worker count")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, seed_override=args.seed, workers_override=args.workers)
        COMMANDS[args.command](config, args.out)
    except ConfigError as exc:
        print(f"csmspec: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"csmspec: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
