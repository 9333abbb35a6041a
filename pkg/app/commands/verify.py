from __future__ import annotations

import argparse
from html import escape
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from app.commands import (
    EXIT_CONFIG,
    CommandError,
    CommandRouter,
    Outcome,
    exit_code_for,
    load_config,
    output_dir,
    report_lines,
    write_report,
)
from app.commands.solve import composite_problem, spd_problem
from app.lib.objective import ObjectiveHandle
from app.lib.scheduler import validate_trace
from app.lib.trace import Trace, read_trace_csv
from app.schemas import ExperimentConfig, load_market_doc
from app.services.linear_systems import CompositeObjective, SpdObjective, controlled_gammas, coupling_sums
from app.services.markets import MarketObjective, market_potential
from app.services.potential_monitor import ControlParams, MonitorReport, build_monitor_report
from app.services.tatonnement import (
    OngoingConfig,
    attach_violations,
    equilibrium_oracle,
    lyapunov_series,
    lyapunov_violations,
    market_control_params,
)

router = CommandRouter(tags=("verify",))

# trace violations that mean the file does not replay
REPLAY_KINDS = frozenset({"delta_p", "replay", "duplicate_time", "order"})


def _market_doc(trace: Trace, cfg: Optional[ExperimentConfig]) -> Any:
    if cfg is not None:
        return load_market_doc(cfg.problem.market, cfg.base_dir)
    if "market" not in trace.problem:
        raise CommandError(EXIT_CONFIG, "market trace carries no market; pass --config")
    return load_market_doc(dict(trace.problem["market"]))


def monitor_inputs(trace: Trace, cfg: Optional[ExperimentConfig]) -> Tuple[ObjectiveHandle, Optional[ControlParams], float, str]:
    """Objective, control constants and phi* the trace is checked against."""
    kind = cfg.problem.kind if cfg is not None else trace.problem.get("kind")
    if kind == "spd":
        if cfg is None:
            raise CommandError(EXIT_CONFIG, "verifying an SPD trace needs --config")
        problem = spd_problem(cfg)
        obj = SpdObjective(problem)
        params = controlled_gammas(np.diag(problem.A), coupling_sums(problem.A)).params()
        return obj, params, obj.min_value(), kind
    if kind == "composite":
        if cfg is None:
            raise CommandError(EXIT_CONFIG, "verifying a composite trace needs --config")
        problem = composite_problem(cfg)
        obj = CompositeObjective(problem)
        params = controlled_gammas(np.diag(problem.gram) + problem.curvature_bounds, coupling_sums(problem.gram)).params()
        return obj, params, obj.min_value(), kind
    if kind in ("ces", "leontief", "ongoing"):
        market = _market_doc(trace, cfg).to_market()
        phi_star = market_potential(market, equilibrium_oracle(market).prices)
        params = None if kind == "ongoing" else market_control_params()
        return MarketObjective(market), params, phi_star, kind
    raise CommandError(EXIT_CONFIG, f"cannot tell which objective produced this trace (kind={kind!r})")


@router.command(
    "verify",
    help="Replay a trace CSV and re-run every monitor check on it",
    arguments=[(("--trace",), {"required": True, "help": "trace CSV (with its .meta.json sidecar)"})],
)
def verify_cmd(args: argparse.Namespace) -> Outcome:
    cfg = load_config(args, required=False)
    trace = read_trace_csv(args.trace)

    replay = [v for v in validate_trace(trace).violations if v.kind in REPLAY_KINDS]
    if replay:
        first = replay[0]
        raise CommandError(EXIT_CONFIG, f"replay mismatch at row {first.seq}: {first.kind}: {first.detail}")

    obj, params, phi_star, kind = monitor_inputs(trace, cfg)
    report = build_monitor_report(trace, obj, params, phi_star=phi_star, extra={"verified": str(args.trace)})
    if kind == "ongoing":
        market = obj.market
        ongoing = OngoingConfig(**{**_ongoing_fields(trace), "override": True})
        times, values = lyapunov_series(trace, market, ongoing, equilibrium_oracle(market).prices)
        attach_violations(report, lyapunov_violations(times, values), blocking=True)

    out = output_dir(args, cfg)
    path = write_report(report, out / "verify.json")
    ok = report.summary.ok
    return Outcome(
        command=args.command,
        exit_code=exit_code_for(None, ok),
        monitor_ok=ok,
        artifacts={"monitor": str(path)},
        summary={"events": report.summary.events, "violations": report.summary.violation_counts},
        lines=[f"verified {args.trace}"] + report_lines(report) + [f"{v.kind} at seq {v.seq}: {v.detail}" for v in report.violations[:20]],
    )


def _ongoing_fields(trace: Trace) -> Dict[str, Any]:
    raw = trace.problem.get("ongoing")
    if not raw:
        raise CommandError(EXIT_CONFIG, "ongoing trace carries no warehouse parameters")
    return {"chi": raw["chi"], "v0": raw["v0"], "lambdas": raw["lambda"], "kappas": raw["kappa"]}


# ---------- Report ----------
def _row(name: str, report: MonitorReport) -> Dict[str, Any]:
    s = report.summary
    rate = s.linear_rate.delta if s.linear_rate is not None else None
    return {
        "name": name,
        "n": s.n,
        "events": s.events,
        "phi_final": s.phi_final,
        "Phi_final": s.Phi_final,
        "bad_updates": s.bad_updates,
        "violations": sum(s.violation_counts.values()),
        "linear_delta": rate,
        "ok": s.ok,
    }


def _fmt(x: Any) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def render_table(rows: List[Dict[str, Any]]) -> List[str]:
    if not rows:
        return []
    cols = list(rows[0])
    cells = [[_fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    header = "  ".join(c.ljust(w) for c, w in zip(cols, widths))
    return [header, "  ".join("-" * w for w in widths)] + ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]


def render_report_html(title: str, rows: List[Dict[str, Any]]) -> str:
    cols = list(rows[0]) if rows else []
    head = "".join(f"<th>{escape(c)}</th>" for c in cols)
    body = "".join(
        f"<tr class='{'ok' if r['ok'] else 'bad'}'>" + "".join(f"<td>{escape(_fmt(r[c]))}</td>" for c in cols) + "</tr>"
        for r in rows
    )
    failing = sum(1 for r in rows if not r["ok"])
    return f"""<!doctype html>
<html><head><meta charset='utf-8'><title>{escape(title)}</title>
<style>
body{{font-family:system-ui,-apple-system,Segoe UI,Roboto,sans-serif;background:#0f1720;color:#e8eef4;margin:0}}
.wrap{{max-width:1080px;margin:0 auto;padding:16px}}
h1{{font-size:20px;margin:0 0 8px}}
.subtitle{{opacity:.8;margin-bottom:16px}}
table{{width:100%;border-collapse:collapse;background:rgba(255,255,255,.03);border-radius:12px}}
th,td{{padding:6px 8px;text-align:left;font-size:13px;border-bottom:1px solid rgba(255,255,255,.08)}}
th{{font-weight:600;opacity:.85}}
tr.bad td{{color:#ff9b9b}}
.total{{font-weight:700;font-size:16px;margin-top:8px}}
</style></head><body><div class='wrap'>
<h1>{escape(title)}</h1>
<div class='subtitle'>{len(rows)} report(s)</div>
<table><thead><tr>{head}</tr></thead><tbody>
{body}
</tbody></table>
<div class='total'>Failing: {failing}</div>
</div></body></html>"""


@router.command(
    "report",
    help="Summarize monitor JSON files as a table (optionally a static HTML page)",
    arguments=[
        (("reports",), {"nargs": "+", "help": "monitor JSON files"}),
        (("--html",), {"default": None, "help": "also write an HTML summary to this path"}),
    ],
)
def report_cmd(args: argparse.Namespace) -> Outcome:
    rows = []
    for name in args.reports:
        path = Path(name)
        if not path.exists():
            raise CommandError(EXIT_CONFIG, f"report not found: {path}")
        try:
            report = MonitorReport.model_validate_json(path.read_text())
        except ValidationError as e:
            raise CommandError(EXIT_CONFIG, f"{path} is not a monitor report: {e.errors()[0].get('msg')}") from e
        rows.append(_row(path.parent.name + "/" + path.name, report))

    artifacts = {}
    if args.html:
        html_path = Path(args.html)
        html_path.parent.mkdir(parents=True, exist_ok=True)
        html_path.write_text(render_report_html("Monitor reports", rows))
        artifacts["html"] = str(html_path)
    ok = all(r["ok"] for r in rows)
    return Outcome(
        command=args.command,
        exit_code=exit_code_for(None, ok),
        monitor_ok=ok,
        artifacts=artifacts,
        summary={"rows": rows},
        lines=render_table(rows),
    )
