# main.py
import sys
import json
import logging
import argparse
import importlib
from typing import List, Optional, Sequence

from app.config import get_settings

logger = logging.getLogger("agdlab")

COMMAND_MODULES = (
    "app.commands.solve",
    "app.commands.market",
    "app.commands.verify",
)


# ---- parser setup ----
def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--out", help="output directory for traces and reports")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--horizon", type=float, default=None, help="override the config horizon")
    common.add_argument("--json", action="store_true", help="print a machine-readable summary on stdout")
    common.add_argument("--override-bounds", action="store_true", help="allow step constants above the proven bounds")
    return common


def _include_command_safe(subparsers, parents, module_name: str, attr: str = "router") -> List[str]:
    try:
        mod = importlib.import_module(module_name)
        names = getattr(mod, attr).install(subparsers, parents)
        logger.debug(f"Included commands: {module_name}:{attr} -> {names}")
        return names
    except Exception as e:
        logger.warning(f"Skipping commands {module_name}:{attr} -> {e}")
        return []


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agdlab",
        description="Asynchronous coordinate descent with potential-function monitoring",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    parents = [_common_flags()]
    for module_name in COMMAND_MODULES:
        _include_command_safe(subparsers, parents, module_name)
    return parser


# ---- error mapping ----
def _exit_code_for_error(e: Exception) -> Optional[int]:
    from app.commands import EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_WAREHOUSE, CommandError
    from app.lib.objective import DomainError
    from app.lib.scheduler import ScheduleError
    from app.lib.trace import TraceFormatError
    from app.schemas import ConfigError
    from app.services.agd_engine import RunAborted
    from app.services.linear_systems import ProblemError
    from app.services.markets import MarketError
    from app.services.potential_monitor import MonitorError
    from app.services.tatonnement import WarehouseBreach

    if isinstance(e, CommandError):
        return e.code
    if isinstance(e, WarehouseBreach):
        return EXIT_WAREHOUSE
    if isinstance(e, RunAborted):
        return EXIT_NOT_CONVERGED
    if isinstance(e, (ConfigError, ProblemError, MarketError, ScheduleError, TraceFormatError, MonitorError, DomainError)):
        return EXIT_CONFIG
    return None


def _emit_error(command: str, code: int, message: str, as_json: bool) -> None:
    if as_json:
        print(json.dumps({"command": command, "exit_code": code, "error": message}, sort_keys=True))
    else:
        print(f"error: {message}", file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        settings = get_settings()
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=settings.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        outcome = args.handler(args)
    except Exception as e:
        code = _exit_code_for_error(e)
        if code is None:
            raise
        logger.error(f"{args.command} failed: {e}")
        _emit_error(args.command, code, str(e), args.json)
        return code

    if args.json:
        print(outcome.model_dump_json())
    else:
        for line in outcome.lines:
            print(line)
        for name, path in outcome.artifacts.items():
            print(f"{name}: {path}")
    logger.info(f"{args.command} exit={outcome.exit_code}")
    return outcome.exit_code


# ---- local entrypoint ----
if __name__ == "__main__":
    sys.exit(main())
