"""Command line entry point: ``bkl <kind> --config FILE [--seed N] [--out DIR] [--workers K]``."""

from __future__ import annotations

import argparse
import json
import sys

from .branching_law import ConfigurationError, DomainError, NumericalError
from .config import KINDS, load_spec
from .harness import run
from .levy_models import PreconditionError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bkl", description="Branching killed Levy process experiments.")
    parser.add_argument("kind", choices=[*KINDS, "run"],
                        help="experiment kind; 'run' takes the kind from the config file")
    parser.add_argument("--config", required=True, help="JSON experiment configuration")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--out", help="directory for <kind>_<hash>.csv and .json (default: CSV on stdout)")
    parser.add_argument("--workers", type=int, help="worker processes (results do not depend on this)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_spec(args.config, None if args.kind == "run" else args.kind)
        spec = spec.with_overrides(seed=args.seed)
        table = run(spec, workers=args.workers, out=args.out)
    except (ConfigurationError, DomainError, PreconditionError, NumericalError, OSError) as exc:
        print(f"bkl: error: {exc}", file=sys.stderr)
        return 2
    if args.out is None and spec.out is None:
        sys.stdout.write(table.to_csv())
        if table.summary:
            print(json.dumps(table.summary, sort_keys=True, default=str), file=sys.stderr)
    return 0
