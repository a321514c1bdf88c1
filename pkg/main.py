#!/usr/bin/env python3
"""
sinkgp command line.

    python main.py toygen --count 100 --cloud-size 30 --out data/toy
    python main.py fit data/toy/manifest.json --out model.json
    python main.py predict model.json data/toy/manifest.json

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 non-convergence
under --strict. Errors are also written to stderr as one JSON line.
"""
import argparse
import json
import logging
import sys

from dotenv import load_dotenv

# Load environment variables from .env file before the configuration classes read them
load_dotenv()

from commands import COMMANDS  # noqa: E402
from commands.common import common_parser  # noqa: E402
from config import get_config  # noqa: E402
from utils.errors import SinkgpError, ValidationError  # noqa: E402
from utils.logging_config import configure_logging  # noqa: E402

logger = logging.getLogger('sinkgp')


def create_cli() -> argparse.ArgumentParser:
    """Create the argument parser with every subcommand registered."""
    parser = argparse.ArgumentParser(
        prog='sinkgp',
        description='Gaussian processes on distributions through Sinkhorn-potential embeddings')
    parser.add_argument('--config', help='configuration name (default: SINKGP_ENV or "default")')
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True

    parents = [common_parser()]
    for command in COMMANDS:
        command.register(subparsers, parents)
    return parser


def _report(error: SinkgpError) -> int:
    print(json.dumps(error.to_dict(), default=str), file=sys.stderr)
    return error.exit_code


def main(argv=None) -> int:
    args = create_cli().parse_args(argv)

    try:
        cfg = get_config(args.config)
        cfg.validate()
    except ValueError as e:
        return _report(ValidationError(str(e)))

    configure_logging(
        level=args.log_level or cfg.LOG_LEVEL,
        json_format=cfg.LOG_JSON if args.log_json is None else args.log_json,
        log_file=cfg.LOG_FILE)

    logger.info("sinkgp %s started", args.command)
    try:
        code = args.handler(args, cfg)
    except SinkgpError as e:
        logger.error("sinkgp %s failed: %s", args.command, e.message)
        return _report(e)
    except OSError as e:
        logger.error("sinkgp %s failed: %s", args.command, e)
        return _report(ValidationError(f"cannot access {e.filename}: {e.strerror}"))
    logger.info("sinkgp %s finished", args.command)
    return code


if __name__ == '__main__':
    sys.exit(main())
