from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from app.lib.objective import BOX_TOL, CoordBox, ObjectiveHandle, Point, as_point, sampled_grad_extremes
from app.lib.trace import Trace

# Float slack on the "at most one time unit apart" rule.
TIME_TOL = 1e-12
# Deterministic per-coordinate offset keeping update times distinct.
JITTER = 1e-9
# Views for non-affine gradients: enumerate corners up to this many, else sample.
ADVERSARIAL_SAMPLES = 64
MAX_HORIZON = 1e4


class ScheduleError(ValueError):
    """Invalid schedule parameters or a step outside the timing model."""


class SchedulePolicy(str, Enum):
    SYNCHRONOUS_JITTER = "synchronous_jitter"
    ROUND_ROBIN = "round_robin"
    RANDOM_GAP = "random_gap"
    BURSTY_ADVERSARIAL = "bursty_adversarial"


class StalenessKind(str, Enum):
    FRESH = "fresh"
    STALEST = "stalest"
    RANDOM_IN_BOX = "random_in_box"
    ADVERSARIAL_IN_BOX = "adversarial_in_box"


# ---------- Models ----------
@dataclass(frozen=True, eq=False)
class Schedule:
    """Per-coordinate sorted update times in (0, horizon]."""

    times: Tuple[np.ndarray, ...]
    horizon: float
    seed: int
    policy: str
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.times)

    def __len__(self) -> int:
        return int(sum(len(t) for t in self.times))

    def events(self) -> Iterator[Tuple[float, int]]:
        """(time, coord) pairs in global time order."""
        heap: List[Tuple[float, int, int]] = []
        for j, ts in enumerate(self.times):
            if len(ts):
                heapq.heappush(heap, (float(ts[0]), j, 0))
        while heap:
            t, j, i = heapq.heappop(heap)
            yield t, j
            if i + 1 < len(self.times[j]):
                heapq.heappush(heap, (float(self.times[j][i + 1]), j, i + 1))

    def describe(self) -> Dict[str, Any]:
        return {"policy": self.policy, "seed": int(self.seed), **self.params}


@dataclass(frozen=True)
class StalenessPolicy:
    kind: StalenessKind = StalenessKind.FRESH
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", StalenessKind(self.kind))

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def describe(self) -> Dict[str, Any]:
        return {"policy": self.kind.value, "seed": int(self.seed)}


# ---------- Schedule generation ----------
def _synchronous_jitter(n: int, horizon: float, rng: np.random.Generator) -> List[np.ndarray]:
    rounds = np.arange(1, int(math.floor(horizon)) + 1, dtype=np.float64)
    ranks = rng.permutation(n)
    out = []
    for j in range(n):
        offset = 1e-7 * (ranks[j] + 1) / (n + 1)
        out.append(rounds - offset)
    return out


def _round_robin(n: int, horizon: float) -> List[np.ndarray]:
    rounds = np.arange(0, int(math.ceil(horizon)), dtype=np.float64)
    out = []
    for j in range(n):
        ts = rounds + (j + 1) / n
        out.append(ts[ts <= horizon])
    return out


def _random_gap(n: int, horizon: float, g_min: float, rng: np.random.Generator) -> List[np.ndarray]:
    out = []
    for j in range(n):
        ts: List[float] = []
        t = max(1.0 - rng.uniform(0.0, 1.0), 1e-6)
        while t <= horizon:
            ts.append(t)
            t = t + rng.uniform(g_min, 1.0)
        out.append(np.array(ts) - JITTER * j)
    return out


def _bursty(n: int, horizon: float, target: int, burst: int) -> List[np.ndarray]:
    rounds = np.arange(1, int(math.floor(horizon)) + 1, dtype=np.float64)
    others = [k for k in range(n) if k != target]
    out: List[np.ndarray] = [np.empty(0)] * n
    out[target] = rounds
    for rank, k in enumerate(others):
        phase = (rank + 1) / (len(others) + 1)
        offsets = (np.arange(burst) + phase) / burst
        ts = (rounds[:, None] - 1.0 + offsets[None, :]).reshape(-1)
        out[k] = ts[ts <= horizon]
    return out


def generate_schedule(
    policy: SchedulePolicy | str,
    n: int,
    horizon: float,
    seed: int = 0,
    *,
    g_min: float = 0.5,
    target: int = 0,
    burst: int = 8,
    max_events: Optional[int] = None,
) -> Schedule:
    policy = SchedulePolicy(policy)
    if n < 1:
        raise ScheduleError("need at least one coordinate")
    if not 0 < horizon <= MAX_HORIZON:
        raise ScheduleError(f"horizon must lie in (0, {MAX_HORIZON:g}], got {horizon}")
    rng = np.random.default_rng(seed)
    params: Dict[str, Any] = {}

    if policy is SchedulePolicy.SYNCHRONOUS_JITTER:
        times = _synchronous_jitter(n, horizon, rng)
    elif policy is SchedulePolicy.ROUND_ROBIN:
        times = _round_robin(n, horizon)
    elif policy is SchedulePolicy.RANDOM_GAP:
        if not 0 < g_min <= 1:
            raise ScheduleError(f"g_min must lie in (0, 1], got {g_min}")
        params["g_min"] = float(g_min)
        times = _random_gap(n, horizon, g_min, rng)
    else:
        if burst < 2:
            raise ScheduleError(f"burst must be at least 2, got {burst}")
        if not 0 <= target < n:
            raise ScheduleError(f"target coordinate {target} out of range")
        if n < 2:
            raise ScheduleError("bursty_adversarial needs at least two coordinates")
        params.update(target=int(target), burst=int(burst))
        times = _bursty(n, horizon, target, burst)

    schedule = Schedule(
        times=tuple(np.asarray(ts, dtype=np.float64) for ts in times),
        horizon=float(horizon),
        seed=int(seed),
        policy=policy.value,
        params=params,
    )
    if max_events is not None and len(schedule) > max_events:
        raise ScheduleError(f"schedule has {len(schedule)} events, cap is {max_events}")
    all_times = np.concatenate(schedule.times) if n else np.empty(0)
    if len(np.unique(all_times)) != len(all_times):
        raise ScheduleError("schedule has coinciding update times")
    return schedule


# ---------- Boxes and views ----------
def window_box(trace: Trace, j: int, t1: float, t2: float, s_j: float) -> CoordBox:
    """Admissible staleness box: coordinate j pinned to s_j, others span their values over [t1, t2]."""
    if t2 > trace.horizon * (1 + TIME_TOL) + TIME_TOL:
        raise ValueError(f"window end {t2} beyond recorded horizon {trace.horizon}")
    return trace.history.window(j, t1, t2, s_j)


def _affine_extreme_views(obj: ObjectiveHandle, j: int, box: CoordBox, row: np.ndarray) -> Tuple[Point, Point]:
    """Views maximizing and minimizing an affine grad_j over the box (sign rule)."""
    high = np.where(row > 0, box.hi, box.lo)
    low = np.where(row > 0, box.lo, box.hi)
    high[j] = low[j] = box.pinned_value
    return high, low


def _adversarial_view(
    obj: ObjectiveHandle, j: int, box: CoordBox, current: Point, rng: np.random.Generator
) -> Point:
    g = obj.grad_coord(current, j)
    affine_row = getattr(obj, "affine_grad_row", None)
    if affine_row is not None:
        candidates = list(_affine_extreme_views(obj, j, box, np.asarray(affine_row(j))))
    elif 2 ** len(box.free_coords) <= ADVERSARIAL_SAMPLES:
        candidates = list(box.corners())
    else:
        candidates = []
        for _ in range(ADVERSARIAL_SAMPLES):
            up = rng.random(box.dim) < 0.5
            candidates.append(np.where(up, box.hi, box.lo))
    best, best_key = current, (0.0, False)
    for view in candidates:
        dev = obj.grad_coord(view, j) - g
        # ties go to the view that pushes further in the fresh gradient's direction
        key = (abs(dev), dev * g > 0)
        if key > best_key:
            best, best_key = view, key
    return best


def stale_view(
    policy: StalenessPolicy,
    box: CoordBox,
    current: Point,
    obj: ObjectiveHandle,
    j: int,
    *,
    anchor: Optional[Point] = None,
    rng: Optional[np.random.Generator] = None,
) -> Point:
    """Pick the point p~ in the admissible box the updating coordinate reads.

    ``anchor`` is the point as it stood right after j's previous update (the
    stalest admissible view); ``rng`` carries the run's sampling state.
    """
    current = as_point(current, box.dim)
    rng = rng if rng is not None else policy.rng()
    kind = policy.kind

    if kind is StalenessKind.FRESH:
        view = current.copy()
    elif kind is StalenessKind.STALEST:
        view = as_point(anchor if anchor is not None else box.lo, box.dim).copy()
    elif kind is StalenessKind.RANDOM_IN_BOX:
        view = box.sample(rng)
    else:
        view = np.array(_adversarial_view(obj, j, box, current, rng), dtype=np.float64)

    view[j] = box.pinned_value
    return np.clip(view, box.lo, box.hi)


# ---------- Validation ----------
@dataclass(frozen=True)
class Violation:
    kind: str
    seq: int
    detail: str


@dataclass
class ViolationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, kind: str) -> int:
        return sum(1 for v in self.violations if v.kind == kind)

    def add(self, kind: str, seq: int, detail: str) -> None:
        self.violations.append(Violation(kind=kind, seq=seq, detail=detail))

    def to_dict(self) -> Dict[str, Any]:
        kinds = sorted({v.kind for v in self.violations})
        return {
            "ok": self.ok,
            "counts": {k: self.count(k) for k in kinds},
            "violations": [v.__dict__ for v in self.violations],
        }


def _close(a: float, b: float, rel: float = 1e-12) -> bool:
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))


def validate_trace(trace: Trace) -> ViolationReport:
    """Every departure from the timing model and from the update rule."""
    report = ViolationReport()
    last_time = -math.inf
    last_update = [0.0] * trace.n
    seen_times = set()
    p = np.array(trace.p0, dtype=np.float64)
    round_length = trace.schedule.get("round_length")

    for ev in trace.events:
        j, t = ev.coord, ev.time
        if t in seen_times:
            report.add("duplicate_time", ev.seq, f"time {t!r} already used")
        elif t <= last_time:
            report.add("order", ev.seq, f"time {t!r} not after {last_time!r}")
        seen_times.add(t)
        last_time = max(last_time, t)

        gap = t - last_update[j]
        if gap <= 0:
            report.add("gap", ev.seq, f"nonpositive gap {gap!r} on coordinate {j}")
        elif gap > 1 + TIME_TOL:
            report.add("gap", ev.seq, f"gap {gap!r} > 1 on coordinate {j}")
        if not _close(ev.tau, last_update[j]):
            report.add("tau", ev.seq, f"tau {ev.tau!r} but previous update of {j} at {last_update[j]!r}")

        interval = float(round_length) if round_length else t - ev.tau
        expected = -ev.g_tilde / ev.gamma * interval if ev.gamma > 0 else math.nan
        if ev.gamma <= 0 or not _close(ev.delta_p, expected):
            report.add("delta_p", ev.seq, f"delta_p {ev.delta_p!r} but rule gives {expected!r}")

        if not _close(ev.value_before, p[j]):
            report.add("replay", ev.seq, f"value_before {ev.value_before!r} but replay has {p[j]!r}")
        if not _close(ev.value_after, ev.value_before + ev.delta_p):
            report.add("replay", ev.seq, "value_after != value_before + delta_p")

        box = trace.history.window(j, ev.tau, t, ev.value_before)
        if not box.contains(ev.view, BOX_TOL):
            report.add("staleness", ev.seq, f"view outside admissible box of coordinate {j}")

        p[j] = ev.value_before + ev.delta_p
        last_update[j] = t

    # every coordinate must move at least once per time unit up to the horizon
    idle_tol = TIME_TOL + JITTER * trace.n
    for k in range(trace.n):
        if trace.finished and trace.horizon - last_update[k] > 1 + idle_tol:
            report.add("gap", -1, f"coordinate {k} idle from {last_update[k]!r} to horizon {trace.horizon!r}")
    return report


def view_range(obj: ObjectiveHandle, j: int, box: CoordBox) -> Tuple[float, float, bool]:
    """(min, max, exact) of grad_j over a box."""
    exact = obj.grad_extremes(j, box)
    if exact is not None:
        return float(exact[0]), float(exact[1]), True
    lo, hi = sampled_grad_extremes(obj, j, box)
    return lo, hi, False
