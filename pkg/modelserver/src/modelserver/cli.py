"""Command-line launcher: load the role manifest and serve over HTTP."""

from __future__ import annotations

import argparse
import json
import os
import sys

import uvicorn

from .app import StartupError, create_app

PORT_ENV_VAR = "MRC_MODELSERVER_PORT"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrc-modelserver",
        description="Serve the backend wire protocol for the "
                    "question-generation pipeline.")
    parser.add_argument("--manifest", default=None,
                        help="JSON file mapping roles (generate, answer, mlm, "
                             "judge, reward) to model identifiers or 'stub'; "
                             "omitted roles default to 'stub'")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=None,
                        help=f"listen port (default 8100, or "
                             f"${PORT_ENV_VAR} when set)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    manifest: dict[str, str] = {}
    if args.manifest:
        try:
            with open(args.manifest, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"manifest error: {exc}", file=sys.stderr)
            return 2
    port = args.port
    if port is None:
        port = int(os.environ.get(PORT_ENV_VAR, "8100"))
    try:
        app = create_app(manifest)
    except StartupError as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 2
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
