"""Command-line entry point: one subcommand per pipeline stage, plus `all`.

Exit codes: 0 success, 2 validation error, 3 missing dependency,
4 transport failure.
"""

from __future__ import annotations

import argparse
import sys

from .backends import TransportError
from .config import ConfigValidationError, validate_config
from .pipeline import STAGES, DependencyError, ValidationError, run_all, run_stage

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DEPENDENCY = 3
EXIT_TRANSPORT = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrcgen",
        description="Generate harder MRC question-answer datasets via "
                    "synthetic-preference RLHF.")
    parser.add_argument("--config", required=True, help="path to the JSON pipeline config")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config's global seed")
    parser.add_argument("--concurrency", type=int, default=None,
                        help="override the bounded-concurrency limit")
    parser.add_argument("--stub-backends", action="store_true",
                        help="force all backends to the deterministic in-process stubs")
    parser.add_argument("--force", action="store_true",
                        help="rerun stages even when up to date")
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES:
        sub.add_parser(name, help=f"run the {name} stage")
    sub.add_parser("all", help="run every stage in order")
    sub.add_parser("validate", help="validate the config and exit")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = validate_config(args.config, seed_override=args.seed,
                                 stub_backends=args.stub_backends)
    except ConfigValidationError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.concurrency is not None:
        config.concurrency = args.concurrency

    try:
        if args.stage == "validate":
            print(f"config OK: {args.config}")
        elif args.stage == "all":
            run_all(config, force=args.force, log=print)
        else:
            result = run_stage(args.stage, config, force=args.force)
            print(f"{result['stage']}: {result['status']}")
    except (ValidationError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
