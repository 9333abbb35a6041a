from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np

from app.config import get_settings
from app.lib.objective import CoordBox, DomainError, ObjectiveHandle, Point, as_point, value
from app.lib.scheduler import (
    TIME_TOL,
    Schedule,
    ScheduleError,
    SchedulePolicy,
    StalenessKind,
    StalenessPolicy,
    generate_schedule,
    stale_view,
)
from app.lib.trace import CoordHistory, Trace, UpdateEvent

logger = logging.getLogger(__name__)

# (coord, time, view, effective g~) -> gamma
GammaCallback = Callable[[int, float, Point, float], float]
# (engine, coord, time, box) -> view
ViewProvider = Callable[["AsyncGradientEngine", int, float, CoordBox], Point]


class RunAborted(RuntimeError):
    """Run stopped mid-way. ``trace`` holds the events recorded before the failure."""

    def __init__(self, message: str, event_index: int, trace: Optional[Trace] = None):
        super().__init__(message)
        self.message = message
        self.event_index = event_index
        self.trace = trace

    def __str__(self) -> str:
        return f"event {self.event_index}: {self.message}"


def compute_update(g_tilde: float, gamma: float, delta_t: float) -> float:
    """Coordinate move -g~/gamma * dt."""
    if not (gamma > 0 and math.isfinite(gamma)):
        raise ValueError(f"step-size denominator must be positive and finite, got {gamma}")
    if not 0 < delta_t <= 1 + TIME_TOL:
        raise ScheduleError(f"delta_t must lie in (0, 1], got {delta_t!r}")
    return -g_tilde / gamma * delta_t


# ---------- Step sizes ----------
@dataclass(frozen=True)
class StepSizeRule:
    """Either fixed per-coordinate gammas or a callback computing gamma per update.

    ``alpha`` is the declared local-Lipschitz slack (gamma_j >= alpha/2 * curvature).
    """

    constant: Optional[Tuple[float, ...]] = None
    callback: Optional[GammaCallback] = None
    alpha: float = 2.0
    name: str = "constant"

    def __post_init__(self) -> None:
        if (self.constant is None) == (self.callback is None):
            raise ValueError("step-size rule needs exactly one of constant or callback")
        if not self.alpha >= 2:
            raise ValueError(f"alpha must be at least 2, got {self.alpha}")
        if self.constant is not None:
            gammas = tuple(float(g) for g in self.constant)
            if not all(g > 0 and math.isfinite(g) for g in gammas):
                raise ValueError("constant gammas must be positive and finite")
            object.__setattr__(self, "constant", gammas)

    @classmethod
    def constant_per_coord(cls, gammas: Sequence[float], alpha: float = 2.0) -> "StepSizeRule":
        return cls(constant=tuple(gammas), alpha=alpha, name="constant")

    @classmethod
    def from_callback(cls, fn: GammaCallback, alpha: float = 2.0, name: str = "callback") -> "StepSizeRule":
        return cls(callback=fn, alpha=alpha, name=name)

    def gamma(self, j: int, t: float, view: Point, g_tilde: float) -> float:
        if self.constant is not None:
            return self.constant[j]
        g = float(self.callback(j, t, view, g_tilde))
        if not (g > 0 and math.isfinite(g)):
            raise ValueError(f"step-size callback returned {g} for coordinate {j} at t={t}")
        return g

    def describe(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"rule": self.name, "alpha": self.alpha}
        if self.constant is not None:
            out["gammas"] = list(self.constant)
        return out


# ---------- Couplings ----------
class Coupling(Protocol):
    """State evolving alongside the prices/coordinates (warehouses, recorders).

    ``advance`` integrates the coupled state to time t with p held constant
    since the previous call; ``adjust_gradient`` maps the stale gradient to the
    one the update actually uses.
    """

    extra_columns: Tuple[str, ...]

    def advance(self, t: float, p: Point) -> None: ...

    def adjust_gradient(self, j: int, g_tilde: float) -> float: ...

    def extras(self, j: int, g_tilde: float, g_fresh: float) -> Dict[str, float]: ...


@dataclass
class RunConfig:
    objective: ObjectiveHandle
    p0: Point
    horizon: float
    step_rule: StepSizeRule
    schedule: SchedulePolicy | str = SchedulePolicy.ROUND_ROBIN
    schedule_seed: int = 0
    schedule_params: Dict[str, Any] = field(default_factory=dict)
    staleness: StalenessPolicy = field(default_factory=StalenessPolicy)
    coupling: Optional[Coupling] = None
    problem: Dict[str, Any] = field(default_factory=dict)
    max_events: Optional[int] = None

    def __post_init__(self) -> None:
        self.p0 = as_point(self.p0, self.objective.dim)
        self.schedule = SchedulePolicy(self.schedule)
        const = self.step_rule.constant
        if const is not None and len(const) != self.objective.dim:
            raise ValueError(f"{len(const)} gammas for dimension {self.objective.dim}")


# ---------- Engine ----------
class AsyncGradientEngine:
    """Sequential event loop applying p_j <- p_j - g~/gamma * dt at scheduled times."""

    def __init__(
        self,
        objective: ObjectiveHandle,
        p0: Point,
        step_rule: StepSizeRule,
        staleness: StalenessPolicy = StalenessPolicy(),
        coupling: Optional[Coupling] = None,
        view_provider: Optional[ViewProvider] = None,
        round_length: Optional[float] = None,
    ):
        self.obj = objective
        self.p = as_point(p0, objective.dim).copy()
        self.p0 = self.p.copy()
        self.step_rule = step_rule
        self.staleness = staleness
        self.coupling = coupling
        self.view_provider = view_provider
        # fixed step interval for round-based runs; otherwise t - tau
        self.round_length = round_length
        self.rng = staleness.rng()
        self.history = CoordHistory(self.p)
        self.last_update = np.zeros(objective.dim)
        # point as it stood right after each coordinate's previous update
        self.anchors: List[Point] = [self.p.copy() for _ in range(objective.dim)]
        self.events: List[UpdateEvent] = []
        self.phi0 = value(objective, self.p)
        self.phi = self.phi0
        self._debug = logger.isEnabledFor(logging.DEBUG)

    @property
    def n(self) -> int:
        return self.obj.dim

    def admissible_box(self, j: int, t: float) -> CoordBox:
        return self.history.window(j, float(self.last_update[j]), t, float(self.p[j]))

    def _view(self, j: int, t: float, box: CoordBox) -> Point:
        if self.view_provider is not None:
            return as_point(self.view_provider(self, j, t, box), self.n)
        return stale_view(self.staleness, box, self.p, self.obj, j, anchor=self.anchors[j], rng=self.rng)

    def _advance_coupling(self, t: float, seq: int) -> None:
        try:
            self.coupling.advance(t, self.p)
        except RunAborted as e:
            e.event_index = seq
            raise

    def apply(self, t: float, j: int) -> UpdateEvent:
        seq = len(self.events)
        tau = float(self.last_update[j])
        if self.coupling is not None:
            self._advance_coupling(t, seq)

        box = self.admissible_box(j, t)
        view = self._view(j, t, box)
        raw_g = float(self.obj.grad_coord(view, j))
        g_fresh = float(self.obj.grad_coord(self.p, j))
        g_tilde = self.coupling.adjust_gradient(j, raw_g) if self.coupling is not None else raw_g

        gamma = self.step_rule.gamma(j, t, view, g_tilde)
        delta_p = compute_update(g_tilde, gamma, self.round_length if self.round_length is not None else t - tau)
        before = float(self.p[j])
        after = before + delta_p

        candidate = self.p.copy()
        candidate[j] = after
        try:
            phi_after = value(self.obj, candidate)
        except DomainError as e:
            raise RunAborted(f"coordinate {j} left the domain at t={t}: {e}", seq)

        extras = self.coupling.extras(j, raw_g, g_fresh) if self.coupling is not None else {}
        event = UpdateEvent(
            seq=seq,
            time=t,
            coord=j,
            tau=tau,
            view=view,
            g_tilde=g_tilde,
            g_fresh=g_fresh,
            gamma=gamma,
            delta_p=delta_p,
            value_before=before,
            value_after=after,
            phi_after=phi_after,
            extras=extras,
        )
        self.p = candidate
        self.phi = phi_after
        self.history.append(j, t, after)
        self.last_update[j] = t
        self.anchors[j] = self.p.copy()
        self.events.append(event)

        observe = getattr(self.obj, "observe_update", None)
        if observe is not None:
            observe(j, delta_p, after)
        if self._debug:
            logger.debug(f"[{seq}] t={t:.9f} j={j} g~={g_tilde:.6g} gamma={gamma:.6g} dp={delta_p:.6g} phi={phi_after:.12g}")
        return event

    def run_schedule(self, schedule: Schedule) -> None:
        if schedule.n != self.n:
            raise ValueError(f"schedule is for {schedule.n} coordinates, objective has {self.n}")
        for t, j in schedule.events():
            self.apply(t, j)
        if self.coupling is not None:
            self._advance_coupling(schedule.horizon, len(self.events))

    def trace(self, horizon: float, finished: bool = True, **meta: Any) -> Trace:
        return Trace(
            p0=self.p0.copy(),
            events=tuple(self.events),
            horizon=float(horizon),
            phi0=self.phi0,
            finished=finished,
            **meta,
        )


def _abort_with_trace(engine: AsyncGradientEngine, e: RunAborted, horizon: float, meta: Mapping[str, Any]) -> RunAborted:
    if e.trace is None:
        e.trace = engine.trace(horizon, finished=False, **meta)
    return e


def run(config: RunConfig) -> Trace:
    """Simulate one asynchronous run over the whole horizon."""
    obj = config.objective
    cap = config.max_events if config.max_events is not None else get_settings().max_events
    schedule = generate_schedule(
        config.schedule, obj.dim, config.horizon, config.schedule_seed, max_events=cap, **config.schedule_params
    )
    engine = AsyncGradientEngine(obj, config.p0, config.step_rule, config.staleness, config.coupling)
    meta = {
        "seed": config.schedule_seed,
        "problem": {**config.problem, "step_rule": config.step_rule.describe()},
        "schedule": schedule.describe(),
        "staleness": config.staleness.describe(),
    }
    logger.info(
        f"run start: n={obj.dim} horizon={config.horizon:g} schedule={schedule.policy} "
        f"staleness={config.staleness.kind.value} events={len(schedule)} phi0={engine.phi0:.12g}"
    )
    try:
        engine.run_schedule(schedule)
    except RunAborted as e:
        logger.error(f"run aborted: {e}")
        raise _abort_with_trace(engine, e, config.horizon, meta)
    trace = engine.trace(config.horizon, **meta)
    logger.info(f"run done: events={len(trace)} phi={engine.phi:.12g}")
    return trace


# ---------- Synchronous baseline ----------
class _RoundSnapshot:
    """Every update in round r reads the point as it stood when round r began."""

    def __init__(self) -> None:
        self.round: Optional[int] = None
        self.point: Optional[Point] = None

    def __call__(self, engine: AsyncGradientEngine, j: int, t: float, box: CoordBox) -> Point:
        r = math.ceil(t)
        if r != self.round:
            self.round, self.point = r, engine.p.copy()
        view = self.point.copy()
        view[j] = box.pinned_value
        return view


def run_synchronous_baseline(
    objective: ObjectiveHandle,
    p0: Point,
    gamma_sync: float | Sequence[float] | StepSizeRule,
    rounds: int,
    *,
    seed: int = 0,
    coupling: Optional[Coupling] = None,
    problem: Optional[Dict[str, Any]] = None,
) -> Trace:
    """Jacobi-style rounds: all coordinates move once per time unit from the round-start point.

    Each update uses a step interval of exactly one round, so dt does not carry the schedule jitter.
    """
    if isinstance(gamma_sync, StepSizeRule):
        rule = gamma_sync
    elif np.isscalar(gamma_sync):
        rule = StepSizeRule.constant_per_coord([float(gamma_sync)] * objective.dim)
    else:
        rule = StepSizeRule.constant_per_coord(gamma_sync)
    if rounds < 0:
        raise ValueError("rounds must be nonnegative")

    staleness = {"policy": "round_snapshot", "seed": int(seed)}
    meta = {"seed": seed, "problem": {**(problem or {}), "step_rule": rule.describe()}, "staleness": staleness}
    engine = AsyncGradientEngine(
        objective,
        p0,
        rule,
        StalenessPolicy(StalenessKind.FRESH, seed),
        coupling,
        view_provider=_RoundSnapshot(),
        round_length=1.0,
    )
    if rounds == 0:
        return engine.trace(0.0, schedule={"policy": "synchronous_baseline", "rounds": 0}, **meta)

    schedule = generate_schedule(SchedulePolicy.SYNCHRONOUS_JITTER, objective.dim, float(rounds), seed)
    meta["schedule"] = {**schedule.describe(), "baseline": True, "round_length": 1.0}
    try:
        engine.run_schedule(schedule)
    except RunAborted as e:
        raise _abort_with_trace(engine, e, float(rounds), meta)
    logger.info(f"baseline done: rounds={rounds} phi={engine.phi:.12g}")
    return engine.trace(float(rounds), **meta)
