from __future__ import annotations

import argparse
import json
from typing import Any, Dict

import numpy as np

from app.commands import (
    EXIT_NOT_CONVERGED,
    EXIT_WAREHOUSE,
    CommandError,
    CommandRouter,
    Outcome,
    exit_code_for,
    expect_problem,
    load_config,
    output_dir,
    report_lines,
    staleness_for,
    write_run_artifacts,
)
from app.lib.trace import write_trace_csv
from app.schemas import load_market_doc
from app.services.agd_engine import RunAborted
from app.services.markets import LAMBDA_MAX
from app.services.potential_monitor import fit_rate, MonitorError
from app.services.tatonnement import MarketRunResult, WarehouseBreach, run_tatonnement

router = CommandRouter(tags=("markets",))


def _summary(res: MarketRunResult) -> Dict[str, Any]:
    extra = res.report.summary.extra
    out: Dict[str, Any] = {
        "final_prices": extra["final_prices"],
        "max_excess": res.max_excess,
        "clearing_residual": res.residual,
        "oracle_prices": extra["oracle_prices"],
        "oracle_converged": extra["oracle_converged"],
        "drift_factors": extra["drift_factors"],
        "events": len(res.trace),
        "violations": res.report.summary.violation_counts,
    }
    if "max_warehouse" in extra:
        out["max_warehouse"] = extra["max_warehouse"]
        out["final_warehouses"] = extra["final_warehouses"]
    rate = res.report.summary.linear_rate
    out["fitted_decay"] = rate.delta if rate is not None else None
    if res.lyapunov is not None:
        try:
            out["lyapunov_decay"] = fit_rate(res.lyapunov - float(np.min(res.lyapunov)), "linear").delta
        except MonitorError:
            out["lyapunov_decay"] = None
    return out


def run_market_command(args: argparse.Namespace, mode: str) -> Outcome:
    cfg = load_config(args)
    spec = expect_problem(cfg, (mode,), args.command)
    doc = load_market_doc(spec.market, cfg.base_dir)
    market = doc.to_market()
    override = bool(getattr(args, "override_bounds", False))
    out = output_dir(args, cfg)
    try:
        res = run_tatonnement(
            market,
            mode,  # type: ignore[arg-type]
            lam=spec.lam if spec.lam is not None else LAMBDA_MAX,
            ongoing=doc.ongoing(override) if mode == "ongoing" else None,
            horizon=cfg.horizon,
            schedule=cfg.schedule.policy,
            schedule_params=dict(cfg.schedule.params),
            seed=cfg.seed,
            staleness=staleness_for(cfg, None),
            p0=spec.p0,
            override=override,
            tolerance=spec.tolerance,
        )
    except RunAborted as e:
        if e.trace is not None:
            write_trace_csv(e.trace, out / "trace.partial.csv")
        code = EXIT_WAREHOUSE if isinstance(e, WarehouseBreach) else EXIT_NOT_CONVERGED
        raise CommandError(code, str(e)) from e

    series = {"time": np.arange(len(res.lyapunov), dtype=np.float64), "lyapunov": res.lyapunov} if res.lyapunov is not None else None
    artifacts = write_run_artifacts(out, res.trace, res.report, series=series)
    summary = _summary(res)
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    artifacts["summary"] = str(summary_path)

    ok = res.report.summary.ok
    lines = [f"max|z|={res.max_excess:.3e} residual={res.residual:.3e} converged={res.converged} prices={np.array2string(res.state.p, precision=6)}"]
    if "max_warehouse" in summary:
        lines.append(f"max|v|={summary['max_warehouse']:.3e}")
    return Outcome(
        command=args.command,
        exit_code=exit_code_for(res.converged, ok),
        converged=res.converged,
        monitor_ok=ok,
        artifacts=artifacts,
        summary=summary,
        lines=lines + report_lines(res.report),
    )


@router.command("market-ces", help="Asynchronous tatonnement in a complementary-CES Fisher market")
def market_ces_cmd(args: argparse.Namespace) -> Outcome:
    return run_market_command(args, "ces")


@router.command("market-leontief", help="Asynchronous tatonnement in a Leontief Fisher market")
def market_leontief_cmd(args: argparse.Namespace) -> Outcome:
    return run_market_command(args, "leontief")


@router.command("market-ongoing", help="Ongoing market: tatonnement with warehouses")
def market_ongoing_cmd(args: argparse.Namespace) -> Outcome:
    return run_market_command(args, "ongoing")
