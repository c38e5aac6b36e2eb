"""Command-line launcher: ``model-server serve --config roles.json``."""

from __future__ import annotations

import argparse
import sys

from .app import ConfigError, load_config, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="model-server")
    sub = parser.add_subparsers(dest="command", required=True)
    p_serve = sub.add_parser("serve", help="serve configured expert roles over HTTP")
    p_serve.add_argument("--config", required=True, help="role map JSON")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8800)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        serve(config, host=args.host, port=args.port)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
