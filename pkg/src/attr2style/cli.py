"""``attr2style <command> [--config PATH] [--out DIR] [key=value ...]``

Exit status: 0 success, 1 usage/config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from attr2style.config import ConfigError, parse_config
from attr2style.experiment import COMMANDS, Workspace

log = logging.getLogger("attr2style")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attr2style", description="Attribute-to-style transfer captioning.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="YAML or JSON config file")
    parser.add_argument("--out", default="runs/default", help="artifact root (default: runs/default)")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("overrides", nargs="*", metavar="key=value")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_intermixed_args(argv)
        cfg = parse_config(args.config, args.overrides)
    except (UsageError, ConfigError) as exc:
        print(f"attr2style: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    ws = Workspace(cfg, args.out)
    try:
        ws.write_config()
        result = COMMANDS[args.command](ws)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 2
        log.debug("command failed", exc_info=True)
        print(f"attr2style: {args.command} failed: {exc}", file=sys.stderr)
        return 2
    if args.command == "compare":
        print(json.dumps({k: result[k] for k in ("accuracy_micro_difference", "bleu_difference")}
                         | {"al_model_accuracy_micro": result["al_model"]["accuracy_micro"],
                            "baseline_accuracy_micro": result["baseline"]["accuracy_micro"]}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
