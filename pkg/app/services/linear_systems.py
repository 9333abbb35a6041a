from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.io
import scipy.optimize
from scipy.special import expit

from app.lib.objective import CoordBox, Point, as_point
from app.lib.scheduler import SchedulePolicy, StalenessKind, StalenessPolicy
from app.lib.trace import Trace
from app.services.agd_engine import RunConfig, StepSizeRule, run, run_synchronous_baseline
from app.services.potential_monitor import ControlParams, MonitorReport, build_monitor_report

logger = logging.getLogger(__name__)

# Relative margin above the strict step-size bounds.
GAMMA_MARGIN = 1e-3
SYMMETRY_TOL = 1e-12
REANCHOR_EVERY = 10_000


class ProblemError(ValueError):
    """Malformed or non-SPD problem data."""


# ---------- Loading ----------
def load_vector(path: str | Path, n: Optional[int] = None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ProblemError(f"vector file not found: {path}")
    try:
        v = np.atleast_1d(np.loadtxt(path, dtype=np.float64)).reshape(-1)
    except ValueError as e:
        raise ProblemError(f"cannot parse vector file {path}: {e}") from e
    if n is not None and v.shape[0] != n:
        raise ProblemError(f"{path} has {v.shape[0]} entries, expected {n}")
    return v


def load_matrix(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ProblemError(f"matrix file not found: {path}")
    try:
        m = scipy.io.mmread(str(path))
    except (ValueError, OSError) as e:
        raise ProblemError(f"cannot parse Matrix Market file {path}: {e}") from e
    return np.asarray(m.todense() if hasattr(m, "todense") else m, dtype=np.float64)


def _symmetrized(A: np.ndarray) -> np.ndarray:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ProblemError(f"matrix must be square, got shape {A.shape}")
    asym = np.max(np.abs(A - A.T)) if A.size else 0.0
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if asym > SYMMETRY_TOL * scale:
        raise ProblemError(f"matrix is not symmetric (max |A - A^T| = {asym:.3g})")
    return 0.5 * (A + A.T)


def coupling_sums(H: np.ndarray) -> np.ndarray:
    """R_j = sum_{k != j} |H_jk|."""
    absH = np.abs(H)
    return absH.sum(axis=1) - np.diag(absH)


# ---------- SPD ----------
@dataclass(frozen=True, eq=False)
class SpdProblem:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        A = _symmetrized(np.asarray(self.A, dtype=np.float64))
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if b.shape[0] != A.shape[0] or not np.all(np.isfinite(b)):
            raise ProblemError(f"rhs must have {A.shape[0]} finite entries")
        try:
            np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise ProblemError("matrix is not positive definite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_files(cls, matrix_path: str | Path, rhs_path: str | Path) -> "SpdProblem":
        A = load_matrix(matrix_path)
        return cls(A=A, b=load_vector(rhs_path, A.shape[0]))

    @property
    def n(self) -> int:
        return int(self.A.shape[0])

    def residual(self, p: Point) -> float:
        return float(np.max(np.abs(self.A @ p - self.b))) if self.n else 0.0

    def solution(self) -> Point:
        return np.linalg.solve(self.A, self.b)


class SpdObjective:
    """f(p) = 1/2 p^T A p - p^T b."""

    constant_hessian = True

    def __init__(self, problem: SpdProblem):
        self.problem = problem
        self.A = problem.A
        self.b = problem.b
        self.dim = problem.n
        self.strong_convexity: Optional[float] = float(np.linalg.eigvalsh(self.A)[0])

    def check_domain(self, p: Point) -> None:
        return None

    def value(self, p: Point) -> float:
        return float(0.5 * p @ self.A @ p - p @ self.b)

    def grad_coord(self, p: Point, j: int) -> float:
        return float(self.A[j] @ p - self.b[j])

    def gradient(self, p: Point) -> Point:
        return self.A @ p - self.b

    def hessian_bound(self, j: int, k: int, box: CoordBox) -> float:
        return abs(float(self.A[j, k]))

    def affine_grad_row(self, j: int) -> np.ndarray:
        return self.A[j]

    def grad_extremes(self, j: int, box: CoordBox) -> Tuple[float, float]:
        row = self.A[j]
        hi = np.where(row > 0, row * box.hi, row * box.lo).sum() - self.b[j]
        lo = np.where(row > 0, row * box.lo, row * box.hi).sum() - self.b[j]
        return float(lo), float(hi)

    def min_value(self) -> float:
        return self.value(self.problem.solution())


# ---------- Composite ----------
class ZeroTerm:
    name = "zero"
    curvature_bound = 0.0
    curvature_floor = 0.0
    affine_derivative = True

    def value(self, x: float) -> float:
        return 0.0

    def deriv(self, x: float) -> float:
        return 0.0

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.name}


class QuadraticTerm:
    """w/2 (x - c)^2."""

    name = "quadratic"
    affine_derivative = True

    def __init__(self, weight: float = 1.0, center: float = 0.0):
        if weight < 0 or not math.isfinite(weight):
            raise ProblemError(f"quadratic weight must be finite and nonnegative, got {weight}")
        self.weight = float(weight)
        self.center = float(center)
        self.curvature_bound = self.weight
        self.curvature_floor = self.weight

    def value(self, x: float) -> float:
        return 0.5 * self.weight * (x - self.center) ** 2

    def deriv(self, x: float) -> float:
        return self.weight * (x - self.center)

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.name, "weight": self.weight, "center": self.center}


class SoftplusTerm:
    """s log(1 + e^{x/s}); curvature at most 1/(4s)."""

    name = "softplus"
    affine_derivative = False
    curvature_floor = 0.0

    def __init__(self, scale: float = 1.0):
        if not scale > 0:
            raise ProblemError(f"softplus scale must be positive, got {scale}")
        self.scale = float(scale)
        self.curvature_bound = 1.0 / (4.0 * self.scale)

    def value(self, x: float) -> float:
        return float(self.scale * np.logaddexp(0.0, x / self.scale))

    def deriv(self, x: float) -> float:
        return float(expit(x / self.scale))

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.name, "scale": self.scale}


TERM_KINDS = {"zero": ZeroTerm, "quadratic": QuadraticTerm, "softplus": SoftplusTerm}


def make_term(spec: Dict[str, Any]):
    spec = dict(spec)
    kind = spec.pop("kind", "zero")
    if kind not in TERM_KINDS:
        raise ProblemError(f"unknown univariate term {kind!r}")
    return TERM_KINDS[kind](**spec)


@dataclass(frozen=True, eq=False)
class CompositeProblem:
    """sum_j f_j(p_j) + 1/2 |Ap - b|^2 with A of shape r x n (r may be 0)."""

    A: np.ndarray
    b: np.ndarray
    terms: Tuple[Any, ...]

    def __post_init__(self) -> None:
        A = np.asarray(self.A, dtype=np.float64)
        if A.ndim != 2:
            raise ProblemError(f"A must be a matrix, got shape {A.shape}")
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if b.shape[0] != A.shape[0]:
            raise ProblemError(f"b has {b.shape[0]} entries for {A.shape[0]} rows")
        terms = tuple(self.terms)
        if len(terms) != A.shape[1]:
            raise ProblemError(f"{len(terms)} univariate terms for {A.shape[1]} columns")
        for t in terms:
            if not (t.curvature_bound >= 0 and math.isfinite(t.curvature_bound)):
                raise ProblemError("curvature bounds must be finite and nonnegative")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "terms", terms)

    @property
    def n(self) -> int:
        return int(self.A.shape[1])

    @property
    def gram(self) -> np.ndarray:
        return self.A.T @ self.A

    @property
    def curvature_bounds(self) -> np.ndarray:
        return np.array([t.curvature_bound for t in self.terms])


class CompositeObjective:
    def __init__(self, problem: CompositeProblem):
        self.problem = problem
        self.A = problem.A
        self.b = problem.b
        self.terms = problem.terms
        self.dim = problem.n
        self.gram = problem.gram
        self.atb = self.A.T @ self.b
        self.L = problem.curvature_bounds
        self.affine = all(t.affine_derivative for t in self.terms)
        if not self.affine:
            # stale-view search falls back to corner enumeration
            self.affine_grad_row = None
        # bounds below never depend on the box
        self.constant_hessian = True
        floor = float(np.linalg.eigvalsh(self.gram)[0]) if self.dim else 0.0
        floor += min((t.curvature_floor for t in self.terms), default=0.0)
        self.strong_convexity: Optional[float] = floor if floor > 1e-12 else None

    def check_domain(self, p: Point) -> None:
        return None

    def value(self, p: Point) -> float:
        r = self.A @ p - self.b
        return float(sum(t.value(x) for t, x in zip(self.terms, p)) + 0.5 * r @ r)

    def grad_coord(self, p: Point, j: int) -> float:
        return float(self.gram[j] @ p - self.atb[j] + self.terms[j].deriv(p[j]))

    def gradient(self, p: Point) -> Point:
        return self.gram @ p - self.atb + np.array([t.deriv(x) for t, x in zip(self.terms, p)])

    def hessian_bound(self, j: int, k: int, box: CoordBox) -> float:
        if j == k:
            return float(self.gram[j, j] + self.L[j])
        return abs(float(self.gram[j, k]))

    def affine_grad_row(self, j: int) -> np.ndarray:
        row = self.gram[j].copy()
        row[j] += self.terms[j].curvature_bound
        return row

    def grad_extremes(self, j: int, box: CoordBox) -> Optional[Tuple[float, float]]:
        if not self.affine:
            return None
        # coordinate j is pinned, so f_j' is constant over the box
        row = self.gram[j]
        base = self.terms[j].deriv(box.pinned_value) - self.atb[j]
        hi = np.where(row > 0, row * box.hi, row * box.lo).sum() + base
        lo = np.where(row > 0, row * box.lo, row * box.hi).sum() + base
        return float(lo), float(hi)

    def minimizer(self) -> Point:
        if self.affine:
            w = np.array([t.curvature_bound for t in self.terms])
            c = np.array([getattr(t, "center", 0.0) for t in self.terms])
            M = self.gram + np.diag(w)
            return np.linalg.lstsq(M, self.atb + w * c, rcond=None)[0]
        res = scipy.optimize.minimize(
            self.value, np.zeros(self.dim), jac=self.gradient, method="L-BFGS-B", options={"gtol": 1e-12, "ftol": 1e-15}
        )
        return np.asarray(res.x)

    def min_value(self) -> float:
        return self.value(self.minimizer())


class GramCache:
    """Incrementally maintained (A_j)^T (Ap - b) and f_j'(p_j)."""

    def __init__(self, problem: CompositeProblem, p: Point, reanchor_every: int = REANCHOR_EVERY):
        self.problem = problem
        self.gram = problem.gram
        self.atb = problem.A.T @ problem.b
        self.terms = problem.terms
        self.reanchor_every = reanchor_every
        self.p = as_point(p, problem.n).copy()
        self.updates = 0
        self.reanchor()

    def reanchor(self) -> None:
        self.ag = self.gram @ self.p - self.atb
        self.fprime = np.array([t.deriv(x) for t, x in zip(self.terms, self.p)])

    def grad(self, j: int) -> float:
        return float(self.ag[j] + self.fprime[j])

    def gradient(self) -> Point:
        return self.ag + self.fprime

    def max_drift(self) -> float:
        """Largest relative gap between the cached and a freshly computed gradient."""
        direct = self.gram @ self.p - self.atb + np.array([t.deriv(x) for t, x in zip(self.terms, self.p)])
        return float(np.max(np.abs(self.gradient() - direct) / np.maximum(1.0, np.abs(direct))))


def incremental_grad_update(cache: GramCache, k: int, delta_pk: float) -> GramCache:
    """Move p_k by delta_pk: every cached (A_j)^T G shifts by delta_pk (A_j)^T A_k; only f_k' is recomputed."""
    if delta_pk == 0.0:
        return cache
    cache.ag += delta_pk * cache.gram[:, k]
    cache.p[k] += delta_pk
    cache.fprime[k] = cache.terms[k].deriv(cache.p[k])
    cache.updates += 1
    if cache.updates % cache.reanchor_every == 0:
        cache.reanchor()
    return cache


class CachedCompositeObjective(CompositeObjective):
    """Composite objective whose gradient reads go through a GramCache.

    Owned by one run: the engine reports every update through ``observe_update``.
    """

    def __init__(self, problem: CompositeProblem, p0: Point):
        super().__init__(problem)
        self.cache = GramCache(problem, p0)

    def grad_coord(self, p: Point, j: int) -> float:
        d = p - self.cache.p
        if not d.any():
            return self.cache.grad(j)
        return float(self.cache.ag[j] + self.gram[j] @ d + self.terms[j].deriv(p[j]))

    def observe_update(self, j: int, delta_p: float, new_value: float) -> None:
        incremental_grad_update(self.cache, j, delta_p)
        # keep the cached point bit-identical to the engine's
        self.cache.p[j] = new_value


# ---------- Step sizes ----------
def _base_gamma(diag: float, coupling: float, alpha: float) -> float:
    base = max((diag + 8.0 * coupling) / 2.0, diag)
    if alpha > 2:
        base = max(base, alpha * diag / 2.0)
    return base


def spd_gamma_bound(A: np.ndarray, j: int, alpha: float = 2.0) -> float:
    """Smallest safe gamma_j for f_{A,b}, with a 1e-3 relative margin."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape[0] != A.shape[1] or np.max(np.abs(A - A.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(A))):
        raise ProblemError("spd_gamma_bound needs a symmetric matrix")
    if alpha < 2:
        raise ProblemError(f"alpha must be at least 2, got {alpha}")
    return (1.0 + GAMMA_MARGIN) * _base_gamma(float(A[j, j]), float(coupling_sums(A)[j]), alpha)


def composite_gamma_bound(gram: np.ndarray, L: Sequence[float], j: int, alpha: float = 2.0) -> float:
    gram = np.asarray(gram, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    if L[j] < 0:
        raise ProblemError("curvature bounds must be nonnegative")
    diag = float(gram[j, j] + L[j])
    return (1.0 + GAMMA_MARGIN) * _base_gamma(diag, float(coupling_sums(gram)[j]), alpha)


@dataclass(frozen=True)
class ControlledSteps:
    gammas: np.ndarray
    alpha: float
    eps: float

    def params(self) -> ControlParams:
        return ControlParams.with_defaults(self.alpha, self.eps, self.eps, "unit")

    def rule(self) -> StepSizeRule:
        return StepSizeRule.constant_per_coord(self.gammas, alpha=self.alpha)


def controlled_gammas(diag: Sequence[float], coupling: Sequence[float], alpha: Optional[float] = None) -> ControlledSteps:
    """Per-coordinate gammas plus one (alpha, eps_F = eps_B) pair meeting the control inequalities.

    alpha = min_j 2 gamma_j / D_jj and eps = max_j R_j / gamma_j; heterogeneous
    rows can push 1/alpha + 4 eps to 1, in which case every gamma is scaled up
    by the same factor.
    """
    D = np.asarray(diag, dtype=np.float64)
    R = np.asarray(coupling, dtype=np.float64)
    if np.any(D < 0) or np.any(R < 0):
        raise ProblemError("curvatures and coupling sums must be nonnegative")
    a = 2.0 if alpha is None else float(alpha)
    gammas = np.array([(1.0 + GAMMA_MARGIN) * _base_gamma(d, r, a) for d, r in zip(D, R)])
    # uncoupled flat coordinates never move
    gammas[gammas == 0] = 1.0

    def constants(g: np.ndarray) -> Tuple[float, float]:
        curved = D > 0
        al = float(np.min(2.0 * g[curved] / D[curved])) if curved.any() else math.inf
        ep = float(np.max(R / g)) if len(g) else 0.0
        return al, ep

    al, ep = constants(gammas)
    if 1.0 / al + 4.0 * ep >= 1.0:
        s = (1.0 / al + 4.0 * ep) * (1.0 + GAMMA_MARGIN)
        gammas = gammas * s
        al, ep = constants(gammas)
    al = min(al, 1e12)
    # eps must be positive for the potential's constants
    ep = max(ep, 1e-9)
    return ControlledSteps(gammas=gammas, alpha=max(al, 2.0), eps=ep)


# ---------- Solvers ----------
@dataclass
class SolveResult:
    solution: Point
    trace: Trace
    report: MonitorReport
    converged: bool
    residual: float
    extra: Dict[str, Any] = field(default_factory=dict)


def _staleness(staleness: StalenessPolicy | StalenessKind | str, seed: int) -> StalenessPolicy:
    if isinstance(staleness, StalenessPolicy):
        return staleness
    return StalenessPolicy(StalenessKind(staleness), seed)


def solve_spd(
    problem: SpdProblem,
    *,
    horizon: float = 200.0,
    schedule: SchedulePolicy | str = SchedulePolicy.RANDOM_GAP,
    schedule_params: Optional[Dict[str, Any]] = None,
    seed: int = 0,
    staleness: StalenessPolicy | StalenessKind | str = StalenessKind.RANDOM_IN_BOX,
    gammas: Optional[Sequence[float]] = None,
    p0: Optional[Point] = None,
    tol: float = 1e-8,
) -> SolveResult:
    """Asynchronous descent on 1/2 p^T A p - p^T b, monitored with xi = 1.

    The returned solution is the final iterate of the trace, not the best-residual one.
    """
    obj = SpdObjective(problem)
    steps = controlled_gammas(np.diag(problem.A), coupling_sums(problem.A))
    if gammas is not None:
        steps = ControlledSteps(gammas=np.asarray(gammas, dtype=np.float64), alpha=steps.alpha, eps=steps.eps)
        advisory = ["gammas overridden; control constants derived from the safe bounds"]
    else:
        advisory = []
    config = RunConfig(
        objective=obj,
        p0=np.zeros(problem.n) if p0 is None else p0,
        horizon=horizon,
        step_rule=steps.rule(),
        schedule=schedule,
        schedule_seed=seed,
        schedule_params=dict(schedule_params or {}),
        staleness=_staleness(staleness, seed),
        problem={"kind": "spd", "n": problem.n},
    )
    trace = run(config)
    p = trace.final_point()
    residual = problem.residual(p)
    report = build_monitor_report(
        trace,
        obj,
        steps.params(),
        phi_star=obj.min_value(),
        strong_convexity=obj.strong_convexity,
        extra={"residual_inf": residual, "tolerance": tol},
        advisory=advisory,
    )
    converged = residual < tol
    logger.info(f"solve_spd: n={problem.n} residual={residual:.3e} converged={converged}")
    return SolveResult(solution=p, trace=trace, report=report, converged=converged, residual=residual)


def solve_composite(
    problem: CompositeProblem,
    *,
    horizon: float = 200.0,
    schedule: SchedulePolicy | str = SchedulePolicy.RANDOM_GAP,
    schedule_params: Optional[Dict[str, Any]] = None,
    seed: int = 0,
    staleness: StalenessPolicy | StalenessKind | str = StalenessKind.RANDOM_IN_BOX,
    p0: Optional[Point] = None,
    tol: float = 1e-8,
) -> SolveResult:
    """Asynchronous descent on the composite objective with cached gradient reads.

    Returns the final iterate; `residual` is the gradient sup-norm there.
    """
    start = np.zeros(problem.n) if p0 is None else as_point(p0, problem.n)
    cached = CachedCompositeObjective(problem, start)
    plain = CompositeObjective(problem)

    gram = problem.gram
    steps = controlled_gammas(np.diag(gram) + problem.curvature_bounds, coupling_sums(gram))
    config = RunConfig(
        objective=cached,
        p0=start,
        horizon=horizon,
        step_rule=steps.rule(),
        schedule=schedule,
        schedule_seed=seed,
        schedule_params=dict(schedule_params or {}),
        staleness=_staleness(staleness, seed),
        problem={"kind": "composite", "n": problem.n, "rows": int(problem.A.shape[0]), "terms": [t.describe() for t in problem.terms]},
    )
    trace = run(config)
    p = trace.final_point()
    grad_inf = float(np.max(np.abs(plain.gradient(p)))) if problem.n else 0.0
    report = build_monitor_report(
        trace,
        plain,
        steps.params(),
        phi_star=plain.min_value(),
        strong_convexity=plain.strong_convexity,
        extra={"grad_inf": grad_inf, "tolerance": tol, "cache_drift": cached.cache.max_drift()},
        advisory=[] if plain.affine else ["gradient extremes sampled for non-quadratic terms"],
    )
    converged = grad_inf < tol
    logger.info(f"solve_composite: n={problem.n} grad_inf={grad_inf:.3e} converged={converged}")
    return SolveResult(solution=p, trace=trace, report=report, converged=converged, residual=grad_inf)


# ---------- Parity ----------
def time_to_residual(trace: Trace, problem: SpdProblem, tol: float) -> Optional[float]:
    """First event time at which |Ap - b|_inf < tol (0 if it already holds at p0)."""
    r = problem.A @ np.asarray(trace.p0) - problem.b
    if np.max(np.abs(r), initial=0.0) < tol:
        return 0.0
    for ev in trace.events:
        r += ev.delta_p * problem.A[:, ev.coord]
        if np.max(np.abs(r)) < tol:
            return ev.time
    return None


@dataclass(frozen=True)
class ParityResult:
    async_time: Optional[float]
    sync_time: Optional[float]

    @property
    def ratio(self) -> Optional[float]:
        if self.async_time is None or self.sync_time is None:
            return None
        return self.async_time / max(self.sync_time, 1e-12)


def parity_ratio(
    problem: SpdProblem,
    *,
    horizon: float = 400.0,
    seed: int = 0,
    g_min: float = 0.5,
    tol: float = 1e-6,
    staleness: StalenessKind | str = StalenessKind.RANDOM_IN_BOX,
) -> ParityResult:
    """Time to reach the residual under random gaps versus synchronous rounds with the same gammas."""
    obj = SpdObjective(problem)
    steps = controlled_gammas(np.diag(problem.A), coupling_sums(problem.A))
    p0 = np.zeros(problem.n)
    async_trace = run(
        RunConfig(
            objective=obj,
            p0=p0,
            horizon=horizon,
            step_rule=steps.rule(),
            schedule=SchedulePolicy.RANDOM_GAP,
            schedule_seed=seed,
            schedule_params={"g_min": g_min},
            staleness=_staleness(staleness, seed),
        )
    )
    sync_trace = run_synchronous_baseline(obj, p0, steps.gammas, int(horizon), seed=seed)
    return ParityResult(
        async_time=time_to_residual(async_trace, problem, tol), sync_time=time_to_residual(sync_trace, problem, tol)
    )


# ---------- Presets ----------
def coupled_adversarial_preset(horizon: float = 200.0, seed: int = 0) -> Tuple[RunConfig, SpdProblem]:
    """Correlated 2x2 system driven by bursts of stale adversarial reads; provokes bad updates."""
    problem = SpdProblem(A=np.array([[2.0, 1.0], [1.0, 2.0]]), b=np.zeros(2))
    steps = controlled_gammas(np.diag(problem.A), coupling_sums(problem.A))
    config = RunConfig(
        objective=SpdObjective(problem),
        p0=np.array([1.0, -0.4]),
        horizon=horizon,
        step_rule=steps.rule(),
        schedule=SchedulePolicy.BURSTY_ADVERSARIAL,
        schedule_seed=seed,
        schedule_params={"target": 0, "burst": 8},
        staleness=StalenessPolicy(StalenessKind.ADVERSARIAL_IN_BOX, seed),
        problem={"kind": "spd", "n": 2, "preset": "coupled_adversarial"},
    )
    return config, problem


def random_diagonally_dominant(n: int, seed: int = 0, dominance: float = 1.5) -> SpdProblem:
    """Symmetric matrix with diagonal dominance factor `dominance` and a random rhs."""
    rng = np.random.default_rng(seed)
    M = rng.uniform(-1.0, 1.0, size=(n, n))
    M = 0.5 * (M + M.T)
    np.fill_diagonal(M, 0.0)
    np.fill_diagonal(M, dominance * np.abs(M).sum(axis=1) + 1.0)
    return SpdProblem(A=M, b=rng.uniform(-1.0, 1.0, size=n))
