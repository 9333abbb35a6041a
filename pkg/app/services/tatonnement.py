from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np

from app.lib.objective import Point, as_point
from app.lib.scheduler import TIME_TOL, SchedulePolicy, StalenessKind, StalenessPolicy
from app.lib.trace import Trace
from app.services.agd_engine import RunAborted, RunConfig, StepSizeRule, run
from app.services.markets import (
    KAPPA_V_MAX,
    LAMBDA_MAX,
    ONGOING_LAMBDA_MAX,
    CesMarket,
    LeontiefMarket,
    Market,
    MarketError,
    MarketObjective,
    check_ongoing_bounds,
    clearing_residual,
    excess_demand,
    market_document,
    market_potential,
    rule_gamma,
)
from app.services.potential_monitor import (
    ControlParams,
    MonitorReport,
    ViolationEntry,
    build_monitor_report,
    tol,
)

logger = logging.getLogger(__name__)

ORACLE_LAMBDA = 1e-3
ORACLE_TOL = 1e-10
ORACLE_MAX_ROUNDS = 10_000_000
BURN_IN = 10.0
WAREHOUSE_TOL = 1e-2
# clearing residual a run must reach to count as converged
CONVERGENCE_TOL = {"ces": 1e-6, "leontief": 1e-4, "ongoing": 1e-3}
# one-unit price drift range under the multiplicative rule
DRIFT_RANGE = (0.81, 1.21)

Mode = Literal["ces", "leontief", "ongoing"]


def market_control_params() -> ControlParams:
    """alpha = 6, eps_F = 1/6, eps_B = 1/5 with xi_k = p_k/p_j."""
    return ControlParams.with_defaults(alpha=6.0, eps_F=1.0 / 6.0, eps_B=1.0 / 5.0, xi_policy="price_ratio")


# ---------- State ----------
@dataclass
class MarketState:
    p: Point
    v: Optional[Point] = None

    def __post_init__(self) -> None:
        self.p = as_point(self.p)
        if np.any(self.p <= 0):
            raise MarketError("market prices must be strictly positive")
        if self.v is not None:
            self.v = as_point(self.v, len(self.p))


@dataclass(frozen=True)
class OngoingConfig:
    """Warehouse capacities, initial offsets and per-good step constants."""

    chi: Tuple[float, ...]
    v0: Tuple[float, ...]
    lambdas: Tuple[float, ...]
    kappas: Tuple[float, ...]
    override: bool = False

    def __post_init__(self) -> None:
        fields = {name: tuple(float(x) for x in getattr(self, name)) for name in ("chi", "v0", "lambdas", "kappas")}
        lengths = {len(v) for v in fields.values()}
        if len(lengths) != 1:
            raise MarketError(f"ongoing parameters have mismatched lengths {sorted(lengths)}")
        for name, vals in fields.items():
            object.__setattr__(self, name, vals)
        for j, (c, v, lam, kap) in enumerate(zip(self.chi, self.v0, self.lambdas, self.kappas)):
            if not c > 0:
                raise MarketError(f"warehouse capacity of good {j} must be positive")
            if abs(v) > c / 2:
                raise MarketError(f"initial offset {v} of good {j} exceeds half its capacity {c}")
            check_ongoing_bounds(lam, kap, self.override)
            if abs(kap * v) > KAPPA_V_MAX:
                raise MarketError(f"|kappa v| of good {j} starts above 1/10")

    @classmethod
    def with_defaults(
        cls,
        n: int,
        *,
        chi: float | Sequence[float] = 1.0,
        v0: Optional[Sequence[float]] = None,
        lam: float | Sequence[float] = ONGOING_LAMBDA_MAX,
        kappas: Optional[Sequence[float]] = None,
        override: bool = False,
    ) -> "OngoingConfig":
        """kappa defaults to lambda/20."""
        lams = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
        return cls(
            chi=tuple(np.broadcast_to(np.asarray(chi, dtype=np.float64), (n,))),
            v0=tuple(v0) if v0 is not None else (0.0,) * n,
            lambdas=tuple(lams),
            kappas=tuple(kappas) if kappas is not None else tuple(lams / 20.0),
            override=override,
        )

    @property
    def n(self) -> int:
        return len(self.chi)

    def as_dict(self) -> Dict[str, Any]:
        return {"chi": list(self.chi), "v0": list(self.v0), "lambda": list(self.lambdas), "kappa": list(self.kappas)}


class WarehouseBreach(RunAborted):
    """A warehouse overflowed or |kappa v| left [0, 1/10] during a run."""

    def __init__(self, message: str, event_index: int = -1, good: Optional[int] = None):
        super().__init__(message, event_index)
        self.good = good


def warehouse_integrate(
    v_j: float,
    segments: Iterable[Tuple[float, float]],
    chi_j: Optional[float] = None,
    *,
    good: int = -1,
    t: Optional[float] = None,
) -> float:
    """v_j minus the integral of a piecewise-constant excess demand given as (duration, z) pieces.

    With a capacity chi_j, leaving [-chi_j/2, chi_j/2] after any piece raises WarehouseBreach.
    """
    out = float(v_j)
    for duration, z in segments:
        if duration < 0:
            raise ValueError(f"negative segment duration {duration}")
        out -= z * duration
        if chi_j is not None and abs(out) > chi_j / 2 + tol(1.0):
            when = "" if t is None else f" at t={t:.6g}"
            raise WarehouseBreach(f"warehouse {good} left its capacity{when}: v={out:.6g}", good=good)
    return out


# ---------- Couplings ----------
class MarketRecorder:
    """Records fresh and stale excess demand next to each price update."""

    extra_columns = ("z_fresh", "z_tilde")

    def advance(self, t: float, p: Point) -> None:
        pass

    def adjust_gradient(self, j: int, g_tilde: float) -> float:
        return g_tilde

    def extras(self, j: int, g_tilde: float, g_fresh: float) -> Dict[str, float]:
        return {"z_fresh": -g_fresh, "z_tilde": -g_tilde}


class Warehouses:
    """Warehouse offsets v, integrated as dv/dt = -z between events.

    The update reads z~ - kappa v in place of z~, i.e. the gradient becomes g~ + kappa v.
    """

    extra_columns = ("v", "z_fresh", "z_tilde")

    def __init__(self, market: Market, config: OngoingConfig):
        if config.n != market.n:
            raise MarketError(f"ongoing parameters cover {config.n} goods, market has {market.n}")
        self.market = market
        self.chi = np.asarray(config.chi)
        self.kappa = np.asarray(config.kappas)
        self.v = np.asarray(config.v0, dtype=np.float64).copy()
        self.t = 0.0

    def advance(self, t: float, p: Point) -> None:
        dt = t - self.t
        if dt > 0:
            z = excess_demand(self.market, p)
            self.v = np.array(
                [warehouse_integrate(self.v[j], [(dt, z[j])], self.chi[j], good=j, t=t) for j in range(len(self.v))]
            )
            self.t = t
        self._check(t)

    def _check(self, t: float) -> None:
        over = np.flatnonzero(np.abs(self.kappa * self.v) > KAPPA_V_MAX)
        if len(over):
            j = int(over[0])
            raise WarehouseBreach(
                f"|kappa v| = {abs(self.kappa[j] * self.v[j]):.4g} for good {j} at t={t:.6g} exceeds 1/10; kappa is misconfigured",
                good=j,
            )

    def adjust_gradient(self, j: int, g_tilde: float) -> float:
        return g_tilde + float(self.kappa[j] * self.v[j])

    def extras(self, j: int, g_tilde: float, g_fresh: float) -> Dict[str, float]:
        return {"v": float(self.v[j]), "z_fresh": -g_fresh, "z_tilde": -g_tilde}


def rule_step_sizes(lambdas: Sequence[float]) -> StepSizeRule:
    """gamma_j = max{1, z_eff}/(lambda_j p_j) with z_eff = -g~ (after any warehouse adjustment)."""
    lams = np.asarray(lambdas, dtype=np.float64)

    def gamma(j: int, t: float, view: Point, g_eff: float) -> float:
        return rule_gamma(float(view[j]), -g_eff, float(lams[j]))

    return StepSizeRule.from_callback(gamma, alpha=6.0, name="tatonnement")


# ---------- Equilibrium oracle ----------
@dataclass(frozen=True)
class OracleResult:
    prices: Point
    excess: Point
    converged: bool
    rounds: int

    @property
    def max_excess(self) -> float:
        return float(np.max(np.abs(self.excess)))

    @property
    def residual(self) -> float:
        return clearing_residual(self.prices, self.excess)


def equilibrium_oracle(
    market: Market,
    *,
    lam: float = ORACLE_LAMBDA,
    tol: float = ORACLE_TOL,
    max_rounds: int = ORACLE_MAX_ROUNDS,
    p0: Optional[Point] = None,
) -> OracleResult:
    """Synchronous tatonnement with fresh demands until the clearing residual drops below tol.

    Goods whose price falls to ~0 may keep negative excess demand (a corner equilibrium).
    """
    p = np.full(market.n, market.budgets.sum() / market.n) if p0 is None else as_point(p0, market.n).copy()
    z = excess_demand(market, p)
    rounds = 0
    while clearing_residual(p, z) >= tol and rounds < max_rounds:
        p = p * (1.0 + lam * np.minimum(z, 1.0))
        z = market.demand_matrix(p).sum(axis=0) - 1.0
        rounds += 1
    residual = clearing_residual(p, z)
    converged = residual < tol
    if not converged:
        logger.warning(f"equilibrium oracle stopped after {rounds} rounds with clearing residual {residual:.3e}")
    return OracleResult(prices=p, excess=z, converged=converged, rounds=rounds)


# ---------- Diagnostics ----------
def lyapunov_ongoing(
    market: Market, state: MarketState, p_star: Point, kappas: Sequence[float], lambdas: Sequence[float]
) -> float:
    """phi(p) + sum_j kappa_j lambda_j p*_j v_j^2."""
    v = np.zeros(market.n) if state.v is None else state.v
    weights = np.asarray(kappas) * np.asarray(lambdas) * np.asarray(p_star)
    return market_potential(market, state.p) + float(np.sum(weights * v**2))


def lyapunov_series(
    trace: Trace,
    market: Market,
    config: OngoingConfig,
    p_star: Point,
) -> Tuple[np.ndarray, np.ndarray]:
    """The ongoing Lyapunov quantity at integer times, replaying warehouses along the trace."""
    times = np.arange(0, int(math.floor(trace.horizon + TIME_TOL)) + 1, dtype=np.float64)
    p = np.asarray(trace.p0, dtype=np.float64).copy()
    v = np.asarray(config.v0, dtype=np.float64).copy()
    z = excess_demand(market, p)
    t = 0.0
    events = iter(trace.events)
    ev = next(events, None)
    values = np.empty(len(times))
    for i, T in enumerate(times):
        while ev is not None and ev.time <= T:
            v = v - z * (ev.time - t)
            t = ev.time
            p[ev.coord] = ev.value_after
            z = excess_demand(market, p)
            ev = next(events, None)
        state = MarketState(p.copy(), v - z * (T - t))
        values[i] = lyapunov_ongoing(market, state, p_star, config.kappas, config.lambdas)
    return times, values


def lyapunov_violations(times: np.ndarray, values: np.ndarray, burn_in: float = BURN_IN) -> List[ViolationEntry]:
    out = []
    for i in range(len(values) - 1):
        if times[i] < burn_in:
            continue
        if values[i + 1] > values[i] + tol(values[i]):
            out.append(
                ViolationEntry(
                    kind="lyapunov",
                    seq=-1,
                    lhs=float(values[i + 1]),
                    rhs=float(values[i]),
                    detail=f"Lyapunov rose between t={times[i]:g} and t={times[i + 1]:g}",
                )
            )
    return out


def price_drift_factors(trace: Trace, window: float = 1.0) -> Tuple[float, float]:
    """Smallest and largest p_k(t2)/p_k(t1) over t1 <= t2 <= t1 + window."""
    lo, hi = 1.0, 1.0
    for k in range(trace.n):
        evs = trace.events_of(k)
        starts = np.array([0.0] + [e.time for e in evs])
        vals = np.array([float(trace.p0[k])] + [e.value_after for e in evs])
        ends = np.append(starts[1:], np.inf)
        for i in range(len(vals)):
            m = int(np.searchsorted(starts, ends[i] + window, side="left"))
            seg = vals[i:m] / vals[i]
            lo, hi = min(lo, float(seg.min())), max(hi, float(seg.max()))
    return lo, hi


def price_upper_bound(market: Market, p0: Point) -> float:
    return max(float(np.max(p0)), 2.0 * float(market.budgets.sum()))


# ---------- Runs ----------
@dataclass
class MarketRunResult:
    state: MarketState
    trace: Trace
    report: MonitorReport
    oracle: OracleResult
    converged: bool
    max_excess: float
    residual: float
    lyapunov: Optional[np.ndarray] = None
    extra: Dict[str, Any] = field(default_factory=dict)


def attach_violations(report: MonitorReport, entries: Sequence[ViolationEntry], blocking: bool) -> None:
    if not entries:
        return
    report.violations.extend(entries)
    counts = dict(report.summary.violation_counts)
    for v in entries:
        counts[v.kind] = counts.get(v.kind, 0) + 1
    report.summary.violation_counts = dict(sorted(counts.items()))
    if blocking:
        report.summary.ok = False


def run_tatonnement(
    market: Market,
    mode: Mode,
    *,
    lam: float = LAMBDA_MAX,
    ongoing: Optional[OngoingConfig] = None,
    horizon: float = 2000.0,
    schedule: SchedulePolicy | str = SchedulePolicy.RANDOM_GAP,
    schedule_params: Optional[Dict[str, Any]] = None,
    seed: int = 0,
    staleness: Optional[StalenessPolicy | StalenessKind | str] = None,
    p0: Optional[Sequence[float]] = None,
    override: bool = False,
    tolerance: Optional[float] = None,
) -> MarketRunResult:
    """Asynchronous multiplicative tatonnement or its ongoing variant with warehouses.

    Plain runs are monitored with the potential under xi_k = p_k/p_j; ongoing
    runs with the price/warehouse Lyapunov quantity.
    """
    if mode == "ces" and not isinstance(market, CesMarket):
        raise MarketError("mode 'ces' needs a CES market")
    if mode == "leontief" and not isinstance(market, LeontiefMarket):
        raise MarketError("mode 'leontief' needs a Leontief market")
    if mode not in CONVERGENCE_TOL:
        raise MarketError(f"unknown market mode {mode!r}")

    if mode == "ongoing":
        ongoing = ongoing or OngoingConfig.with_defaults(market.n, override=override)
        coupling: Any = Warehouses(market, ongoing)
        lambdas = np.asarray(ongoing.lambdas)
        default_staleness = StalenessKind.FRESH
    else:
        if lam <= 0 or (lam > LAMBDA_MAX and not override):
            raise MarketError(f"lambda must lie in (0, 1/23.46], got {lam}")
        coupling = MarketRecorder()
        lambdas = np.full(market.n, float(lam))
        default_staleness = StalenessKind.RANDOM_IN_BOX
    if staleness is None:
        staleness = default_staleness
    if not isinstance(staleness, StalenessPolicy):
        staleness = StalenessPolicy(StalenessKind(staleness), seed)

    start = np.ones(market.n) if p0 is None else as_point(p0, market.n)
    if np.any(start <= 0):
        raise MarketError("initial prices must be strictly positive")
    obj = MarketObjective(market)
    problem: Dict[str, Any] = {"kind": mode, "market": market_document(market), "lambda": [float(x) for x in lambdas]}
    if ongoing is not None and mode == "ongoing":
        problem["ongoing"] = ongoing.as_dict()

    trace = run(
        RunConfig(
            objective=obj,
            p0=start,
            horizon=horizon,
            step_rule=rule_step_sizes(lambdas),
            schedule=schedule,
            schedule_seed=seed,
            schedule_params=dict(schedule_params or {}),
            staleness=staleness,
            coupling=coupling,
            problem=problem,
        )
    )
    p = trace.final_point()
    z = excess_demand(market, p)
    max_excess = float(np.max(np.abs(z)))
    residual = clearing_residual(p, z)
    oracle = equilibrium_oracle(market)
    phi_star = market_potential(market, oracle.prices)

    U = price_upper_bound(market, start)
    max_price = max(float(np.max(start)), max((e.value_after for e in trace.events), default=0.0))
    drift = price_drift_factors(trace)
    extra: Dict[str, Any] = {
        "final_prices": [float(x) for x in p],
        "max_excess": max_excess,
        "clearing_residual": residual,
        "oracle_prices": [float(x) for x in oracle.prices],
        "oracle_converged": oracle.converged,
        "price_upper_bound": U,
        "max_price": max_price,
        "drift_factors": list(drift),
    }
    advisory = []
    if not oracle.converged:
        advisory.append("equilibrium oracle did not converge; phi* is approximate")

    lyap = None
    state = MarketState(p)
    if mode == "ongoing":
        state.v = coupling.v.copy()
        extra["final_warehouses"] = [float(x) for x in state.v]
        extra["max_warehouse"] = float(np.max(np.abs(state.v)))
        report = build_monitor_report(trace, obj, None, phi_star=phi_star, extra=extra, advisory=advisory)
        times, lyap = lyapunov_series(trace, market, ongoing, oracle.prices)
        attach_violations(report, lyapunov_violations(times, lyap), blocking=True)
    else:
        if mode == "leontief":
            advisory.append("Leontief convergence is checked empirically; no rate is asserted")
        report = build_monitor_report(trace, obj, market_control_params(), phi_star=phi_star, extra=extra, advisory=advisory)

    bound_issues = []
    if max_price > U + tol(U):
        bound_issues.append(ViolationEntry(kind="price_bound", seq=-1, lhs=max_price, rhs=U, detail="price exceeded U"))
    if mode != "ongoing" and lam <= LAMBDA_MAX and not (DRIFT_RANGE[0] <= drift[0] and drift[1] <= DRIFT_RANGE[1]):
        bound_issues.append(
            ViolationEntry(kind="price_drift", seq=-1, lhs=drift[0], rhs=drift[1], detail="unit-window drift outside [0.81, 1.21]")
        )
    attach_violations(report, bound_issues, blocking=False)

    threshold = CONVERGENCE_TOL[mode] if tolerance is None else tolerance
    converged = residual < threshold
    if mode == "ongoing":
        converged = converged and extra["max_warehouse"] < WAREHOUSE_TOL
    logger.info(f"{mode} market: goods={market.n} events={len(trace)} max|z|={max_excess:.3e} residual={residual:.3e} converged={converged}")
    return MarketRunResult(
        state=state,
        trace=trace,
        report=report,
        oracle=oracle,
        converged=converged,
        max_excess=max_excess,
        residual=residual,
        lyapunov=lyap,
        extra=extra,
    )