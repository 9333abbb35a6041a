from __future__ import annotations

import argparse
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from app.lib.scheduler import StalenessKind, StalenessPolicy
from app.lib.trace import Trace, write_trace_csv
from app.schemas import ExperimentConfig, load_experiment
from app.services.potential_monitor import MonitorReport

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_VIOLATIONS = 4
EXIT_WAREHOUSE = 5


class CommandError(Exception):
    """Stops a command with a specific exit code."""

    def __init__(self, code: int, detail: str):
        super().__init__(detail)
        self.code = code
        self.detail = detail


class Outcome(BaseModel):
    command: str
    exit_code: int = EXIT_OK
    converged: Optional[bool] = None
    monitor_ok: Optional[bool] = None
    artifacts: Dict[str, str] = Field(default_factory=dict)
    summary: Dict[str, Any] = Field(default_factory=dict)
    lines: List[str] = Field(default_factory=list, exclude=True)


def exit_code_for(converged: Optional[bool], monitor_ok: Optional[bool]) -> int:
    if monitor_ok is False:
        return EXIT_VIOLATIONS
    if converged is False:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# ---------- Router ----------
Handler = Callable[[argparse.Namespace], Outcome]
Argument = Tuple[Tuple[str, ...], Dict[str, Any]]


@dataclass
class Command:
    name: str
    handler: Handler
    help: str = ""
    arguments: Sequence[Argument] = field(default_factory=tuple)


class CommandRouter:
    """Collects subcommands of one module; main.py installs them into the parser."""

    def __init__(self, tags: Sequence[str] = ()):
        self.tags = tuple(tags)
        self.commands: List[Command] = []

    def command(self, name: str, help: str = "", arguments: Sequence[Argument] = ()) -> Callable[[Handler], Handler]:
        def register(fn: Handler) -> Handler:
            self.commands.append(Command(name, fn, help, tuple(arguments)))
            return fn

        return register

    def install(self, subparsers: Any, parents: Sequence[argparse.ArgumentParser] = ()) -> List[str]:
        names = []
        for cmd in self.commands:
            p = subparsers.add_parser(cmd.name, help=cmd.help, parents=list(parents))
            for flags, kwargs in cmd.arguments:
                p.add_argument(*flags, **kwargs)
            p.set_defaults(handler=cmd.handler, command=cmd.name)
            names.append(cmd.name)
        return names


# ---------- Shared helpers ----------
def load_config(args: argparse.Namespace, required: bool = True) -> Optional[ExperimentConfig]:
    """Load --config and apply --horizon/--seed overrides."""
    if not getattr(args, "config", None):
        if required:
            raise CommandError(EXIT_CONFIG, f"{args.command} needs --config")
        return None
    cfg = load_experiment(args.config)
    updates: Dict[str, Any] = {}
    if getattr(args, "horizon", None) is not None:
        updates["horizon"] = float(args.horizon)
    if getattr(args, "seed", None) is not None:
        updates["seed"] = int(args.seed)
    if updates:
        base = cfg.base_dir
        cfg = ExperimentConfig.model_validate({**cfg.model_dump(by_alias=True), **updates})
        cfg._base_dir = base
    return cfg


def expect_problem(cfg: ExperimentConfig, kinds: Sequence[str], command: str) -> Any:
    if cfg.problem.kind not in kinds:
        raise CommandError(EXIT_CONFIG, f"{command} cannot run a {cfg.problem.kind!r} problem (expects {'/'.join(kinds)})")
    return cfg.problem


def staleness_for(cfg: ExperimentConfig, default: Optional[StalenessKind]) -> Optional[StalenessPolicy]:
    if cfg.staleness is None:
        return None if default is None else StalenessPolicy(default, cfg.seed)
    seed = cfg.staleness.seed if cfg.staleness.seed is not None else cfg.seed
    return StalenessPolicy(cfg.staleness.policy, seed)


def output_dir(args: argparse.Namespace, cfg: Optional[ExperimentConfig]) -> Path:
    if getattr(args, "out", None):
        out = Path(args.out)
    elif cfg is not None and cfg.output:
        out = cfg.resolve(cfg.output)
    else:
        out = Path("out") / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_report(report: MonitorReport, path: Path) -> Path:
    path.write_text(report.model_dump_json(indent=2) + "\n")
    return path


def write_run_artifacts(
    out: Path,
    trace: Trace,
    report: Optional[MonitorReport],
    *,
    solution: Optional[np.ndarray] = None,
    series: Optional[Dict[str, np.ndarray]] = None,
    trace_name: str = "trace.csv",
) -> Dict[str, str]:
    artifacts = {"trace": str(write_trace_csv(trace, out / trace_name))}
    if report is not None:
        artifacts["monitor"] = str(write_report(report, out / "monitor.json"))
    if solution is not None:
        path = out / "solution.txt"
        np.savetxt(path, np.asarray(solution), fmt="%.17g")
        artifacts["solution"] = str(path)
    if series is not None:
        path = out / "series.csv"
        pd.DataFrame(series).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        artifacts["series"] = str(path)
    logger.info(f"artifacts written to {out}")
    return artifacts


def report_lines(report: MonitorReport) -> List[str]:
    s = report.summary
    lines = [
        f"events={s.events} horizon={s.horizon:g} phi0={s.phi0:.12g} phi_final={s.phi_final:.12g} phi*={s.phi_star:.12g}",
        f"bad_updates={s.bad_updates} violations={s.violation_counts or {}} ok={s.ok}",
    ]
    if s.linear_rate is not None and s.linear_rate.delta is not None:
        lines.append(f"linear rate delta={s.linear_rate.delta:.6g} envelope_ok={s.linear_rate.envelope_ok}")
    for note in s.advisory:
        lines.append(f"note: {note}")
    return lines
