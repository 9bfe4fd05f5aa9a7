"""Command-line entry point: python -m app.main <command> --config run.json"""

from __future__ import annotations

import argparse
import logging
import sys

from pydantic import ValidationError

from . import evaluate, prepare, sweeps, train
from .config import settings
from .errors import LocalizerError
from .utils import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="localizer", description=settings.app_name)
    parser.add_argument("--log-level", default=None, help=f"logging level (default {settings.log_level})")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in (prepare, train, evaluate, sweeps):
        module.register(subparsers)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging((args.log_level or settings.log_level).upper())
    try:
        return args.handler(args)
    except ValidationError as exc:
        logger.error("invalid run config: %s", exc)
        return EXIT_CONFIG
    except LocalizerError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
