#!/usr/bin/env python3
"""
Securities Lending Haircut CLI

Batch command line for calibrating asset dynamics, solving rating-targeted
haircuts and pricing borrower-default indemnification.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from .commands import (
    EXIT_INPUT_ERROR,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    EXIT_SELF_CHECK_FAILED,
    EXIT_TARGET_UNREACHABLE,
)
from .commands.calibrate import CalibrateCommand
from .commands.haircut import HaircutCommand
from .commands.price import PriceCommand
from .engine import HaircutEngine
from .errors import ConfigurationError

logger = logging.getLogger(__name__)

COMMANDS = {
    CalibrateCommand.name: CalibrateCommand,
    HaircutCommand.name: HaircutCommand,
    PriceCommand.name: PriceCommand,
}

EXIT_CODES_HELP = f"""exit codes:
  {EXIT_OK}  success
  {EXIT_INPUT_ERROR}  invalid input or configuration
  {EXIT_NOT_CONVERGED}  calibration did not converge
  {EXIT_TARGET_UNREACHABLE}  rating target unreachable below the haircut cap
  {EXIT_SELF_CHECK_FAILED}  --self-check found an inconsistency in the outputs
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seclend-haircut",
        description="Rating-targeted securities lending haircuts and indemnification pricing",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, command in COMMANDS.items():
        sub = subparsers.add_parser(
            name,
            help=command.help,
            epilog=EXIT_CODES_HELP,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        sub.add_argument("--config", help="Run configuration JSON")
        sub.add_argument("--seed", type=int, help="Override simulation.seed")
        sub.add_argument("--workers", type=int, help="Worker processes (never changes results)")
        sub.add_argument("--out", default=".", help="Output directory")
        sub.add_argument("--self-check", action="store_true", help="Run consistency checks on outputs")
        command.add_arguments(sub)
    return parser


def command_arguments(args: argparse.Namespace) -> Dict[str, Any]:
    """Map parsed flags onto the request fields of the chosen command."""
    arguments: Dict[str, Any] = {
        "config_path": args.config,
        "out_dir": args.out,
        "self_check": args.self_check,
    }
    if args.command == CalibrateCommand.name:
        arguments.update(csv_path=args.csv_path, zero_drift=args.zero_drift)
    else:
        arguments["seed"] = args.seed
    if args.command == PriceCommand.name:
        arguments["borrower"] = args.borrower
    return arguments


def configure_logging() -> None:
    level = os.getenv("SECLEND_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and return its exit code."""
    load_dotenv()
    configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != CalibrateCommand.name and args.config is None:
        parser.error(f"{args.command} requires --config")

    try:
        engine = HaircutEngine(workers=args.workers)
    except ConfigurationError as e:
        logger.error(f"Invalid execution settings: {e}")
        return EXIT_INPUT_ERROR

    logger.info(f"Running {args.command} with {engine.workers} worker(s)")
    result = COMMANDS[args.command](engine).execute(command_arguments(args))
    if result["success"]:
        logger.info(result.get("message", "Done"))
        return EXIT_OK
    logger.error(f"{result['error']}: {result['details']}")
    return int(result.get("exit_code", EXIT_INPUT_ERROR))


if __name__ == "__main__":
    sys.exit(main())
