from __future__ import annotations

import argparse
from typing import Optional

import numpy as np

from app.commands import (
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
from app.lib.scheduler import StalenessKind
from app.schemas import CompositeSpec, ExperimentConfig, SpdSpec
from app.services.linear_systems import (
    CompositeProblem,
    ProblemError,
    SolveResult,
    SpdProblem,
    load_matrix,
    load_vector,
    make_term,
    solve_composite,
    solve_spd,
)

router = CommandRouter(tags=("linear",))


# ---------- Problem loading ----------
def _start_point(cfg: ExperimentConfig, spec: SpdSpec | CompositeSpec, n: int) -> Optional[np.ndarray]:
    if spec.p0 is None:
        return None
    if isinstance(spec.p0, str):
        return load_vector(cfg.resolve(spec.p0), n)
    p0 = np.asarray(spec.p0, dtype=np.float64)
    if p0.shape != (n,):
        raise ProblemError(f"p0 has {p0.shape[0]} entries, expected {n}")
    return p0


def spd_problem(cfg: ExperimentConfig) -> SpdProblem:
    spec = cfg.problem
    return SpdProblem.from_files(cfg.resolve(spec.matrix), cfg.resolve(spec.rhs))


def composite_problem(cfg: ExperimentConfig) -> CompositeProblem:
    spec = cfg.problem
    A = load_matrix(cfg.resolve(spec.matrix))
    b = load_vector(cfg.resolve(spec.rhs), A.shape[0])
    n = A.shape[1]
    specs = spec.terms if isinstance(spec.terms, list) else [spec.terms] * n
    if len(specs) != n:
        raise ProblemError(f"{len(specs)} univariate terms for {n} columns")
    return CompositeProblem(A=A, b=b, terms=tuple(make_term(t.as_dict()) for t in specs))


def _outcome(args: argparse.Namespace, cfg: ExperimentConfig, res: SolveResult, key: str) -> Outcome:
    out = output_dir(args, cfg)
    artifacts = write_run_artifacts(out, res.trace, res.report, solution=res.solution)
    ok = res.report.summary.ok
    return Outcome(
        command=args.command,
        exit_code=exit_code_for(res.converged, ok),
        converged=res.converged,
        monitor_ok=ok,
        artifacts=artifacts,
        summary={
            key: res.residual,
            "events": len(res.trace),
            "bad_updates": res.report.summary.bad_updates,
            "violations": res.report.summary.violation_counts,
        },
        lines=[f"{key}={res.residual:.3e} converged={res.converged}"] + report_lines(res.report),
    )


# ---------- Commands ----------
@router.command("solve-spd", help="Solve Ap = b (A symmetric positive definite) by asynchronous coordinate descent")
def solve_spd_cmd(args: argparse.Namespace) -> Outcome:
    cfg = load_config(args)
    spec = expect_problem(cfg, ("spd",), args.command)
    problem = spd_problem(cfg)
    res = solve_spd(
        problem,
        horizon=cfg.horizon,
        schedule=cfg.schedule.policy,
        schedule_params=dict(cfg.schedule.params),
        seed=cfg.seed,
        staleness=staleness_for(cfg, StalenessKind.RANDOM_IN_BOX),
        gammas=spec.gammas,
        p0=_start_point(cfg, spec, problem.n),
        tol=spec.tolerance,
    )
    return _outcome(args, cfg, res, "residual_inf")


@router.command("solve-composite", help="Minimize sum_j f_j(p_j) + 1/2 |Ap - b|^2 asynchronously")
def solve_composite_cmd(args: argparse.Namespace) -> Outcome:
    cfg = load_config(args)
    spec = expect_problem(cfg, ("composite",), args.command)
    problem = composite_problem(cfg)
    res = solve_composite(
        problem,
        horizon=cfg.horizon,
        schedule=cfg.schedule.policy,
        schedule_params=dict(cfg.schedule.params),
        seed=cfg.seed,
        staleness=staleness_for(cfg, StalenessKind.RANDOM_IN_BOX),
        p0=_start_point(cfg, spec, problem.n),
        tol=spec.tolerance,
    )
    return _outcome(args, cfg, res, "grad_inf")
