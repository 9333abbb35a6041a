from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from app.lib.objective import CoordBox, ObjectiveHandle, Point, full_gradient, hessian_bound, value
from app.lib.scheduler import validate_trace, view_range, window_box
from app.lib.trace import Trace, UpdateEvent

logger = logging.getLogger(__name__)

# Floors for samples fed to the rate fit.
RATE_FLOOR = 1e-14
MIN_RATE_SAMPLES = 10
A1_POINTS = 11


class MonitorError(ValueError):
    """Invalid control constants, unfinished traces or too-short series."""


def tol(x: float) -> float:
    return 1e-9 * max(1.0, abs(x))


# ---------- Control constants ----------
def default_constants(alpha: float, eps_F: float, eps_B: float) -> Tuple[float, float]:
    """(c1, c2) making the potential non-increasing at controlled updates."""
    if alpha < 2 or eps_F <= 0 or eps_B <= 0:
        raise MonitorError(f"need alpha >= 2 and positive eps, got alpha={alpha} eps_F={eps_F} eps_B={eps_B}")
    slack = 1.0 - 1.0 / alpha - 2.0 * eps_B - 2.0 * eps_F
    if slack <= 0:
        raise MonitorError(f"1/alpha + 2 eps_B + 2 eps_F must be < 1 (slack {slack:.3g})")
    c1 = min(slack, 0.25) / (1.0 + 4.0 * eps_B)
    c2 = 1.0 - c1 * (2.0 + 8.0 * eps_B)
    return c1, c2


XiPolicy = Literal["unit", "price_ratio"]


@dataclass(frozen=True)
class ControlParams:
    alpha: float
    eps_F: float
    eps_B: float
    c1: float
    c2: float
    xi_policy: XiPolicy = "unit"

    def __post_init__(self) -> None:
        if self.alpha < 2:
            raise MonitorError(f"alpha must be at least 2, got {self.alpha}")
        if 1.0 / self.alpha + 2.0 * self.eps_B + 2.0 * self.eps_F >= 1.0:
            raise MonitorError("control constants violate 1/alpha + 2 eps_B + 2 eps_F < 1")
        if self.c1 <= 0 or self.c2 <= 0:
            raise MonitorError(f"c1 and c2 must be positive, got {self.c1}, {self.c2}")
        if self.xi_policy not in ("unit", "price_ratio"):
            raise MonitorError(f"unknown xi policy {self.xi_policy!r}")

    @classmethod
    def with_defaults(cls, alpha: float, eps_F: float, eps_B: float, xi_policy: XiPolicy = "unit") -> "ControlParams":
        c1, c2 = default_constants(alpha, eps_F, eps_B)
        return cls(alpha=alpha, eps_F=eps_F, eps_B=eps_B, c1=c1, c2=c2, xi_policy=xi_policy)

    def xi_row(self, p: Point, j: int) -> np.ndarray:
        """xi_k for every k at an update of coordinate j (entry j is unused)."""
        if self.xi_policy == "unit":
            return np.ones_like(p)
        return p / p[j]

    @property
    def lower_bound_factor(self) -> float:
        return 1.0 - 2.0 * self.c1 * (1.0 + 4.0 * self.eps_B)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "eps_F": self.eps_F,
            "eps_B": self.eps_B,
            "c1": self.c1,
            "c2": self.c2,
            "xi_policy": self.xi_policy,
        }


# ---------- Hessian boxes ----------
class _HessianOracle:
    """hessian_bound over trace windows; box-independent objectives use one precomputed matrix."""

    def __init__(self, trace: Trace, obj: ObjectiveHandle):
        self.trace = trace
        self.obj = obj
        self.matrix: Optional[np.ndarray] = None
        if getattr(obj, "constant_hessian", False):
            n = obj.dim
            box = CoordBox.degenerate(trace.p0, 0)
            self.matrix = np.array([[hessian_bound(obj, j, k, box) for k in range(n)] for j in range(n)])

    def forward(self, j: int, t: float, p_after: Point) -> Tuple[np.ndarray, bool]:
        """H_jk over P_k(t, sigma_k; p_k) for all k != j, plus whether any sigma_k was cut at the horizon."""
        n = self.obj.dim
        hist = self.trace.history
        out = np.zeros(n)
        truncated = False
        for k in range(n):
            if k == j:
                continue
            sigma = hist.next_update(k, t)
            if sigma is None:
                truncated = True
                sigma = self.trace.horizon
            if self.matrix is not None:
                out[k] = self.matrix[j, k]
            else:
                box = hist.window(k, t, max(sigma, t), float(p_after[k]))
                out[k] = hessian_bound(self.obj, j, k, box)
        return out, truncated

    def backward(self, j: int, tau: float, t: float, s_j: float, mask: np.ndarray) -> np.ndarray:
        """H_kj over P_j(tau, t; s_j) for the k selected by mask."""
        if self.matrix is not None:
            return np.where(mask, self.matrix[:, j], 0.0)
        box = self.trace.history.window(j, tau, t, s_j)
        out = np.zeros(self.obj.dim)
        for k in np.flatnonzero(mask):
            out[k] = hessian_bound(self.obj, int(k), j, box)
        return out


def _require_finished(trace: Trace) -> None:
    if not trace.finished:
        raise MonitorError("potential needs a finished trace (future update times must be known)")


def _gamma_bar(trace: Trace) -> np.ndarray:
    gb = np.full(trace.n, np.inf)
    for ev in trace.events:
        gb[ev.coord] = ev.gamma if not np.isfinite(gb[ev.coord]) else max(gb[ev.coord], ev.gamma)
    return gb


# ---------- Potential ----------
@dataclass(frozen=True)
class PotentialRecord:
    seq: int
    time: float
    coord: int
    Phi_before: float
    Phi_after: float
    phi_before: float
    phi_after: float
    integral_before: float
    integral_after: float
    cross_before: float
    cross_after: float
    truncated: bool


@dataclass(frozen=True)
class GapRecord:
    t_start: float
    t_end: float
    delta_Phi: float
    min_bracket: float


@dataclass
class PotentialSeries:
    """Phi around every event, shifted so the minimum of phi is 0."""

    params: ControlParams
    phi_star: float
    Phi0: float
    records: List[PotentialRecord] = field(default_factory=list)
    gaps: List[GapRecord] = field(default_factory=list)
    Phi_final: float = math.nan

    def Phi_values(self) -> np.ndarray:
        return np.array([self.Phi0] + [r.Phi_after for r in self.records])


def potential_series(trace: Trace, obj: ObjectiveHandle, params: ControlParams, phi_star: float = 0.0) -> PotentialSeries:
    """Offline evaluation of the amortized potential just before and after every event.

    Between events p is constant, so the gradient integral is exact: each
    coordinate's integral grows by g_j^2/gamma_bar_j times the gap, and each
    cross term w*(2 - c2*(t - beta)) shrinks by c2*w per unit time.
    """
    _require_finished(trace)
    n = trace.n
    c1, c2 = params.c1, params.c2
    inv_gbar = 1.0 / _gamma_bar(trace)
    oracle = _HessianOracle(trace, obj)

    p = np.array(trace.p0, dtype=np.float64)
    phi = trace.phi0 - phi_star
    g = full_gradient(obj, p)
    integral = np.zeros(n)
    weight = np.zeros(n)  # sum of w over live cross terms per coordinate
    cross = np.zeros(n)  # sum of w*(2 - c2*(t - beta))
    oldest_beta = np.full(n, np.inf)  # birth of the oldest live term per coordinate
    oldest_w = np.zeros(n)
    series = PotentialSeries(params=params, phi_star=phi_star, Phi0=phi)
    t_prev = 0.0

    def advance(t_end: float) -> None:
        gap = t_end - t_prev
        d_int = g * g * inv_gbar * gap
        d_cross = c2 * weight * gap
        integral[:] += d_int
        cross[:] -= d_cross
        # every live term has w >= 0, so the oldest one carries the smallest bracket
        live = np.isfinite(oldest_beta)
        terms = oldest_w[live] * (2.0 - c2 * (t_end - oldest_beta[live]))
        min_bracket = float(np.min(terms)) if terms.size else 0.0
        series.gaps.append(
            GapRecord(t_start=t_prev, t_end=t_end, delta_Phi=float(-c1 * d_int.sum() - d_cross.sum()), min_bracket=min_bracket)
        )

    for ev in trace.events:
        advance(ev.time)
        j = ev.coord
        int_before = c1 * float(integral.sum())
        cross_before = float(cross.sum())
        Phi_before = phi - int_before + cross_before
        phi_before = phi

        p_before = p.copy()
        p[j] = ev.value_after
        phi = ev.phi_after - phi_star
        integral[j] = weight[j] = cross[j] = 0.0
        oldest_beta[j], oldest_w[j] = np.inf, 0.0

        h_fwd, truncated = oracle.forward(j, ev.time, p)
        w = params.xi_row(p_before, j) * h_fwd * (ev.delta_p**2 / ev.delta_t)
        w[j] = 0.0
        born = (w > 0.0) & ~np.isfinite(oldest_beta)
        oldest_beta[born] = ev.time
        oldest_w[born] = w[born]
        weight += w
        cross += 2.0 * w

        int_after = c1 * float(integral.sum())
        cross_after = float(cross.sum())
        series.records.append(
            PotentialRecord(
                seq=ev.seq,
                time=ev.time,
                coord=j,
                Phi_before=Phi_before,
                Phi_after=phi - int_after + cross_after,
                phi_before=phi_before,
                phi_after=phi,
                integral_before=int_before,
                integral_after=int_after,
                cross_before=cross_before,
                cross_after=cross_after,
                truncated=truncated,
            )
        )
        g = full_gradient(obj, p)
        t_prev = ev.time

    advance(trace.horizon)
    series.Phi_final = phi - c1 * float(integral.sum()) + float(cross.sum())
    return series


# ---------- Checks over a potential series ----------
@dataclass(frozen=True)
class CheckViolation:
    kind: str
    seq: int
    lhs: float
    rhs: float
    detail: str = ""


def check_update_monotonic(series: PotentialSeries) -> List[CheckViolation]:
    """Events where Phi rose across the update."""
    return [
        CheckViolation("update_monotonic", r.seq, r.Phi_after, r.Phi_before)
        for r in series.records
        if r.Phi_after > r.Phi_before + tol(r.Phi_before)
    ]


def check_between_updates(series: PotentialSeries) -> List[CheckViolation]:
    """Inter-event changes must be nonpositive and every cross bracket stays nonnegative."""
    out = []
    for i, gp in enumerate(series.gaps):
        if gp.delta_Phi > tol(gp.delta_Phi):
            out.append(CheckViolation("between_updates", i, gp.delta_Phi, 0.0, f"gap [{gp.t_start}, {gp.t_end}]"))
        if gp.min_bracket < -tol(gp.min_bracket):
            out.append(CheckViolation("negative_bracket", i, gp.min_bracket, 0.0, f"gap [{gp.t_start}, {gp.t_end}]"))
    return out


def check_lower_bound(series: PotentialSeries) -> List[CheckViolation]:
    """Phi >= (1 - 2 c1 (1 + 4 eps_B)) * (phi - phi*) at every event boundary."""
    prm = series.params
    if 2.0 - prm.c2 < prm.c1 * (2.0 + 8.0 * prm.eps_B):
        return []
    factor = prm.lower_bound_factor
    out = []
    for r in series.records:
        for Phi, phi in ((r.Phi_before, r.phi_before), (r.Phi_after, r.phi_after)):
            if Phi < factor * phi - tol(phi):
                out.append(CheckViolation("lower_bound", r.seq, Phi, factor * phi))
                break
    return out


def check_level_set(trace: Trace, phi_star: float = 0.0) -> List[CheckViolation]:
    """phi(p^t) - phi* stays within twice its starting gap."""
    cap = 2.0 * (trace.phi0 - phi_star)
    return [
        CheckViolation("level_set", ev.seq, ev.phi_after - phi_star, cap)
        for ev in trace.events
        if ev.phi_after - phi_star > cap + tol(cap)
    ]


# ---------- Per-event conditions ----------
@dataclass(frozen=True)
class ConditionRecord:
    seq: int
    a1_ok: bool
    a1_worst_gap: float
    a3_lhs: float
    a3_rhs: float
    a4_lhs: float
    a4_rhs: float
    truncated: bool

    @property
    def a3_ok(self) -> bool:
        return self.a3_lhs <= self.a3_rhs + tol(self.a3_rhs)

    @property
    def a4_ok(self) -> bool:
        return self.a4_lhs <= self.a4_rhs + tol(self.a4_rhs)


def _a1_gap(obj: ObjectiveHandle, p: Point, phi_p: float, ev: UpdateEvent, alpha: float) -> float:
    """max over the update segment of lhs - rhs in the local Lipschitz inequality."""
    worst = -math.inf
    for s in np.linspace(0.0, 1.0, A1_POINTS)[1:]:
        step = s * ev.delta_p
        q = p.copy()
        q[ev.coord] += step
        lhs = value(obj, q) - phi_p - ev.g_fresh * step
        rhs = ev.gamma / alpha * step * step
        worst = max(worst, lhs - rhs - tol(phi_p))
    return worst if math.isfinite(worst) else 0.0


def check_conditions(trace: Trace, obj: ObjectiveHandle, params: ControlParams) -> List[ConditionRecord]:
    _require_finished(trace)
    n = trace.n
    oracle = _HessianOracle(trace, obj)
    # inv_xi[o, u]: max 1/xi_o over updates of u since o last moved
    inv_xi = np.zeros((n, n))
    p = np.array(trace.p0, dtype=np.float64)
    phi_p = trace.phi0
    out: List[ConditionRecord] = []

    for ev in trace.events:
        j = ev.coord
        xi = params.xi_row(p, j)
        a1 = _a1_gap(obj, p, phi_p, ev, params.alpha)

        mask = inv_xi[j] > 0
        h_back = oracle.backward(j, ev.tau, ev.time, ev.value_before, mask)
        a4_lhs = float((inv_xi[j] * h_back).sum())

        p_after = p.copy()
        p_after[j] = ev.value_after
        h_fwd, truncated = oracle.forward(j, ev.time, p_after)
        xi_fwd = xi.copy()
        xi_fwd[j] = 0.0
        a3_lhs = float((xi_fwd * h_fwd).sum())

        out.append(
            ConditionRecord(
                seq=ev.seq,
                a1_ok=a1 <= 0,
                a1_worst_gap=a1,
                a3_lhs=a3_lhs,
                a3_rhs=params.eps_F * ev.gamma,
                a4_lhs=a4_lhs,
                a4_rhs=params.eps_B * ev.gamma,
                truncated=truncated,
            )
        )

        inv_xi[j, :] = 0.0
        others = np.arange(n) != j
        inv_xi[others, j] = np.maximum(inv_xi[others, j], 1.0 / xi[others])
        p = p_after
        phi_p = ev.phi_after
    return out


def condition_violations(records: Sequence[ConditionRecord]) -> List[CheckViolation]:
    """A1/A4 everywhere; A3 only where no forward window was cut at the horizon."""
    out = []
    for r in records:
        if not r.a1_ok:
            out.append(CheckViolation("A1", r.seq, r.a1_worst_gap, 0.0))
        if not r.a3_ok and not r.truncated:
            out.append(CheckViolation("A3", r.seq, r.a3_lhs, r.a3_rhs))
        if not r.a4_ok:
            out.append(CheckViolation("A4", r.seq, r.a4_lhs, r.a4_rhs))
    return out


def check_progress_bound(trace: Trace, obj: ObjectiveHandle, params: ControlParams) -> List[CheckViolation]:
    """Single-update progress: phi- - phi+ >= (1 - 1/alpha) gamma dp^2/dt - |g - g~| |dp|."""
    out = []
    phi_before = trace.phi0
    for ev in trace.events:
        drop = phi_before - ev.phi_after
        bound = (1.0 - 1.0 / params.alpha) * ev.gamma * ev.delta_p**2 / ev.delta_t - abs(ev.g_fresh - ev.g_tilde) * abs(
            ev.delta_p
        )
        if drop < bound - tol(phi_before):
            out.append(CheckViolation("progress", ev.seq, drop, bound))
        phi_before = ev.phi_after
    return out


# ---------- Gradient error over a staleness window ----------
@dataclass(frozen=True)
class GradientErrorCheck:
    lhs: float
    rhs: float
    lhs_sq: float
    rhs_sq: float
    exact: bool
    interleaved: int

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs + tol(self.rhs) and self.lhs_sq <= self.rhs_sq + tol(self.rhs_sq)


def check_gradient_error_bound(
    trace: Trace,
    obj: ObjectiveHandle,
    j: int,
    tau: float,
    t: float,
    eta: float | Sequence[float],
    mu: float,
) -> GradientErrorCheck:
    """Gradient spread over P_j(tau, t) against the weighted Hessian sums of the updates in between.

    Exact when the objective knows its gradient extremes over a box; sampled
    (advisory) otherwise.
    """
    hist = trace.history
    s_j = hist.value_at(j, t)
    box = window_box(trace, j, tau, t, s_j)
    g_min, g_max, exact = view_range(obj, j, box)
    spread = g_max - g_min

    between = [ev for ev in trace.events if tau < ev.time < t and ev.coord != j]
    etas = np.full(len(between), float(eta)) if np.isscalar(eta) else np.asarray(eta, dtype=np.float64)
    if len(etas) != len(between):
        raise ValueError(f"{len(etas)} eta weights for {len(between)} interleaved updates")

    eta_bar: Dict[int, float] = {}
    v2 = 0.0
    for ev, e in zip(between, etas):
        k = ev.coord
        eta_bar[k] = min(eta_bar.get(k, math.inf), e)
        h = hessian_bound(obj, k, j, hist.window(j, ev.time, t, s_j))
        v2 += e * h * ev.delta_p**2 / ev.delta_t
    v1 = sum(hessian_bound(obj, k, j, box) / eb for k, eb in eta_bar.items())

    return GradientErrorCheck(
        lhs=abs(mu) * spread,
        rhs=2.0 * mu * mu * v1 + v2,
        lhs_sq=spread * spread,
        rhs_sq=8.0 * v1 * v2,
        exact=exact,
        interleaved=len(between),
    )


# ---------- Rates ----------
@dataclass(frozen=True)
class RateFit:
    mode: str
    delta: Optional[float]
    C: Optional[float]
    residual: float
    samples: int
    envelope_ok: bool


def fit_rate(phi_values: Sequence[float], mode: Literal["linear", "sublinear"] = "linear", times: Optional[Sequence[float]] = None) -> RateFit:
    """Fit phi(t) <= (1 - delta)^t phi(0) (linear) or phi(t) <= C/t (sublinear).

    The series is cut at the first value at or below 1e-14.
    """
    vals = np.asarray(phi_values, dtype=np.float64)
    ts = np.arange(len(vals), dtype=np.float64) if times is None else np.asarray(times, dtype=np.float64)
    if ts.shape != vals.shape:
        raise MonitorError("times and values differ in length")
    below = np.flatnonzero(vals <= RATE_FLOOR)
    if len(below):
        vals, ts = vals[: below[0]], ts[: below[0]]
    if len(vals) < MIN_RATE_SAMPLES:
        raise MonitorError(f"rate fit needs at least {MIN_RATE_SAMPLES} positive samples, got {len(vals)}")

    if mode == "linear":
        logs = np.log(vals)
        slope, intercept = np.polyfit(ts, logs, 1)
        resid = float(np.sqrt(np.mean((logs - (slope * ts + intercept)) ** 2)))
        delta_lsq = 1.0 - math.exp(slope)
        later = ts > ts[0]
        ratios = np.exp((logs[later] - logs[0]) / (ts[later] - ts[0]))
        delta_env = 1.0 - float(ratios.max())
        delta = min(delta_lsq, delta_env)
        envelope = vals[0] * (1.0 - delta) ** (ts - ts[0])
        ok = bool(delta > 0 and np.all(vals <= envelope * (1 + 1e-9)))
        return RateFit(mode="linear", delta=delta, C=None, residual=resid, samples=len(vals), envelope_ok=ok)

    if mode == "sublinear":
        pos = ts > 0
        t, v = ts[pos], vals[pos]
        c_lsq = float(np.sum(v / t) / np.sum(1.0 / t**2))
        C = max(c_lsq, float(np.max(t * v)))
        resid = float(np.sqrt(np.mean((v - c_lsq / t) ** 2)))
        ok = bool(np.all(v <= C / t * (1 + 1e-9)))
        return RateFit(mode="sublinear", delta=None, C=C, residual=resid, samples=len(v), envelope_ok=ok)

    raise MonitorError(f"unknown rate mode {mode!r}")


def theoretical_linear_rate(c: float, c1: float, c2: float, gamma_bar: float) -> float:
    """Per-unit-time decay min{c*c1/gamma_bar, c2/4} from the strong-convexity argument."""
    if c <= 0 or gamma_bar <= 0:
        return 0.0
    return min(c * c1 / gamma_bar, c2 / 4.0)


# ---------- Report ----------
class ViolationEntry(BaseModel):
    kind: str
    seq: int
    lhs: float = 0.0
    rhs: float = 0.0
    detail: str = ""


class EventRecordOut(BaseModel):
    seq: int
    time: float
    coord: int
    phi_before: float
    phi_after: float
    Phi_before: Optional[float] = None
    Phi_after: Optional[float] = None
    a1_ok: Optional[bool] = None
    a3_lhs: Optional[float] = None
    a3_rhs: Optional[float] = None
    a4_lhs: Optional[float] = None
    a4_rhs: Optional[float] = None
    truncated: bool = False
    bad_update: bool = False


class RateOut(BaseModel):
    mode: str
    delta: Optional[float] = None
    C: Optional[float] = None
    residual: float
    samples: int
    envelope_ok: bool


class MonitorSummary(BaseModel):
    n: int
    events: int
    horizon: float
    phi0: float
    phi_final: float
    phi_star: float
    control: Optional[Dict[str, Any]] = None
    Phi0: Optional[float] = None
    Phi_final: Optional[float] = None
    bad_updates: int = 0
    violation_counts: Dict[str, int] = Field(default_factory=dict)
    linear_rate: Optional[RateOut] = None
    sublinear_rate: Optional[RateOut] = None
    theoretical_rate: Optional[float] = None
    advisory: List[str] = Field(default_factory=list)
    extra: Dict[str, Any] = Field(default_factory=dict)
    ok: bool = True


class MonitorReport(BaseModel):
    schema_version: int = 1
    summary: MonitorSummary
    violations: List[ViolationEntry] = Field(default_factory=list)
    events: List[EventRecordOut] = Field(default_factory=list)

    def violation_count(self, kind: Optional[str] = None) -> int:
        if kind is None:
            return len(self.violations)
        return sum(1 for v in self.violations if v.kind == kind)


# Violations that fail a run; the rest are reported only.
BLOCKING = frozenset({"trace", "update_monotonic", "between_updates", "negative_bracket", "A1", "A3", "A4"})


def _rate_out(fit: Optional[RateFit]) -> Optional[RateOut]:
    if fit is None:
        return None
    return RateOut(**fit.__dict__)


def _try_fit(values: np.ndarray, mode: str) -> Optional[RateFit]:
    try:
        return fit_rate(values, mode)  # type: ignore[arg-type]
    except MonitorError as e:
        logger.info(f"{mode} rate fit skipped: {e}")
        return None


def build_monitor_report(
    trace: Trace,
    obj: ObjectiveHandle,
    params: Optional[ControlParams],
    *,
    phi_star: float = 0.0,
    strong_convexity: Optional[float] = None,
    extra: Optional[Dict[str, Any]] = None,
    advisory: Sequence[str] = (),
    check_conditions_too: bool = True,
) -> MonitorReport:
    """Validate the trace, evaluate the potential, run every condition check and fit rates.

    With ``params=None`` only the trace checks, level-set and rate fits run
    (runs that are not gradient descent on phi).
    """
    violations: List[CheckViolation] = []
    trace_report = validate_trace(trace)
    for v in trace_report.violations:
        violations.append(CheckViolation("trace", v.seq, 0.0, 0.0, f"{v.kind}: {v.detail}"))

    records: Dict[int, EventRecordOut] = {}
    phi_before = trace.phi0
    bad = 0
    for ev in trace.events:
        is_bad = ev.phi_after > phi_before + tol(phi_before)
        bad += is_bad
        records[ev.seq] = EventRecordOut(
            seq=ev.seq, time=ev.time, coord=ev.coord, phi_before=phi_before, phi_after=ev.phi_after, bad_update=is_bad
        )
        phi_before = ev.phi_after

    summary = MonitorSummary(
        n=trace.n,
        events=len(trace),
        horizon=trace.horizon,
        phi0=trace.phi0,
        phi_final=phi_before,
        phi_star=phi_star,
        bad_updates=bad,
        advisory=list(advisory),
        extra=dict(extra or {}),
    )

    if params is not None:
        series = potential_series(trace, obj, params, phi_star)
        violations += check_update_monotonic(series)
        violations += check_between_updates(series)
        violations += check_lower_bound(series)
        violations += check_progress_bound(trace, obj, params)
        for r in series.records:
            out = records[r.seq]
            out.Phi_before, out.Phi_after, out.truncated = r.Phi_before, r.Phi_after, r.truncated
        if check_conditions_too:
            conds = check_conditions(trace, obj, params)
            violations += condition_violations(conds)
            for c in conds:
                out = records[c.seq]
                out.a1_ok, out.a3_lhs, out.a3_rhs, out.a4_lhs, out.a4_rhs = c.a1_ok, c.a3_lhs, c.a3_rhs, c.a4_lhs, c.a4_rhs
        summary.control = params.as_dict()
        summary.Phi0 = series.Phi0
        summary.Phi_final = series.Phi_final
        if strong_convexity:
            gamma_bar = float(np.max(_gamma_bar(trace)[np.isfinite(_gamma_bar(trace))], initial=0.0))
            summary.theoretical_rate = theoretical_linear_rate(strong_convexity, params.c1, params.c2, gamma_bar)
        violations += check_level_set(trace, phi_star)

    gaps = trace.phi_at_integer_times() - phi_star
    summary.linear_rate = _rate_out(_try_fit(gaps, "linear"))
    summary.sublinear_rate = _rate_out(_try_fit(gaps, "sublinear"))

    counts: Dict[str, int] = {}
    for v in violations:
        counts[v.kind] = counts.get(v.kind, 0) + 1
    summary.violation_counts = dict(sorted(counts.items()))
    summary.ok = not any(v.kind in BLOCKING for v in violations)
    logger.info(f"monitor: events={summary.events} bad_updates={bad} violations={summary.violation_counts} ok={summary.ok}")

    return MonitorReport(
        summary=summary,
        violations=[ViolationEntry(kind=v.kind, seq=v.seq, lhs=v.lhs, rhs=v.rhs, detail=v.detail) for v in violations],
        events=list(records.values()),
    )
