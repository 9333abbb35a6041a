from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.lib.objective import CoordBox, Point, as_point

# Column order of the trace CSV; extras and view columns follow.
BASE_COLUMNS = (
    "seq",
    "time",
    "coord",
    "tau",
    "g_tilde",
    "g_fresh",
    "gamma",
    "delta_p",
    "value_before",
    "value_after",
    "phi_after",
)
FLOAT_FORMAT = "%.17g"


# ---------- Models ----------
@dataclass(frozen=True, eq=False)
class UpdateEvent:
    """One asynchronous update: who moved when, from which view, by how much.

    ``value_before``/``value_after`` are the updated coordinate's values;
    ``phi_after`` is the objective just after the update.
    """

    seq: int
    time: float
    coord: int
    tau: float
    view: Point
    g_tilde: float
    g_fresh: float
    gamma: float
    delta_p: float
    value_before: float
    value_after: float
    phi_after: float
    extras: Mapping[str, float] = field(default_factory=dict)

    @property
    def delta_t(self) -> float:
        return self.time - self.tau


class CoordHistory:
    """Piecewise-constant value history of every coordinate.

    ``times[k]`` are the update times of coordinate k; ``values[k][i]`` is its
    value after i updates (``values[k][0]`` is the initial value).
    """

    def __init__(self, p0: Point):
        self.times: List[List[float]] = [[] for _ in range(len(p0))]
        self.values: List[List[float]] = [[float(x)] for x in p0]

    @property
    def dim(self) -> int:
        return len(self.values)

    def append(self, k: int, t: float, new_value: float) -> None:
        self.times[k].append(float(t))
        self.values[k].append(float(new_value))

    def value_at(self, k: int, t: float) -> float:
        """p_k^t, the value just before any update at exactly t."""
        return self.values[k][bisect.bisect_left(self.times[k], t)]

    def point_at(self, t: float) -> Point:
        return np.array([self.value_at(k, t) for k in range(self.dim)], dtype=np.float64)

    def span(self, k: int, t1: float, t2: float) -> Tuple[float, float]:
        """[min, max] of p_k over [t1, t2], both endpoints included."""
        first = bisect.bisect_left(self.times[k], t1)
        last = bisect.bisect_right(self.times[k], t2)
        attained = self.values[k][first : last + 1]
        return min(attained), max(attained)

    def window(self, j: int, t1: float, t2: float, s_j: float) -> CoordBox:
        if t1 > t2:
            raise ValueError(f"window start {t1} after end {t2}")
        lo = np.empty(self.dim)
        hi = np.empty(self.dim)
        for k in range(self.dim):
            if k == j:
                lo[k] = hi[k] = s_j
            else:
                lo[k], hi[k] = self.span(k, t1, t2)
        return CoordBox(lo=lo, hi=hi, pinned_coord=j, pinned_value=s_j)

    def next_update(self, k: int, t: float) -> Optional[float]:
        """First update of coordinate k strictly after t."""
        i = bisect.bisect_right(self.times[k], t)
        return self.times[k][i] if i < len(self.times[k]) else None

    def previous_update(self, k: int, t: float) -> float:
        """Last update of coordinate k strictly before t (0 if none)."""
        i = bisect.bisect_left(self.times[k], t)
        return self.times[k][i - 1] if i > 0 else 0.0


@dataclass(frozen=True, eq=False)
class Trace:
    """Full record of one run. Immutable once built."""

    p0: Point
    events: Tuple[UpdateEvent, ...]
    horizon: float
    phi0: float
    seed: int = 0
    problem: Mapping[str, Any] = field(default_factory=dict)
    schedule: Mapping[str, Any] = field(default_factory=dict)
    staleness: Mapping[str, Any] = field(default_factory=dict)
    finished: bool = True

    @property
    def n(self) -> int:
        return int(len(self.p0))

    def __len__(self) -> int:
        return len(self.events)

    @cached_property
    def history(self) -> CoordHistory:
        h = CoordHistory(self.p0)
        for ev in self.events:
            h.append(ev.coord, ev.time, ev.value_after)
        return h

    @cached_property
    def points_before(self) -> np.ndarray:
        """Row i is p^t just before event i (replayed from p0 and the deltas)."""
        out = np.empty((len(self.events), self.n))
        p = np.array(self.p0, dtype=np.float64)
        for i, ev in enumerate(self.events):
            out[i] = p
            p[ev.coord] = ev.value_before + ev.delta_p
        return out

    def final_point(self) -> Point:
        p = np.array(self.p0, dtype=np.float64)
        for ev in self.events:
            p[ev.coord] = ev.value_before + ev.delta_p
        return p

    def points(self) -> Iterator[Point]:
        """p after each event, in order."""
        p = np.array(self.p0, dtype=np.float64)
        for ev in self.events:
            p[ev.coord] = ev.value_before + ev.delta_p
            yield p.copy()

    def phi_series(self) -> Tuple[np.ndarray, np.ndarray]:
        """(times, phi) step series starting at (0, phi0)."""
        times = np.array([0.0] + [ev.time for ev in self.events])
        phis = np.array([self.phi0] + [ev.phi_after for ev in self.events])
        return times, phis

    def phi_at_integer_times(self) -> np.ndarray:
        """phi(p^t) for t = 0, 1, ..., floor(horizon)."""
        times, phis = self.phi_series()
        grid = np.arange(0, int(np.floor(self.horizon)) + 1, dtype=np.float64)
        # p^t is the value before an update at exactly t
        idx = np.searchsorted(times, grid, side="left") - 1
        idx[0] = 0
        return phis[np.maximum(idx, 0)]

    def events_of(self, k: int) -> List[UpdateEvent]:
        return [ev for ev in self.events if ev.coord == k]


# ---------- Serialization ----------
def _meta_path(csv_path: Path) -> Path:
    return csv_path.with_name(csv_path.stem + ".meta.json")


def trace_frame(trace: Trace) -> pd.DataFrame:
    extra_keys = sorted({key for ev in trace.events for key in ev.extras})
    rows = []
    for ev in trace.events:
        row: Dict[str, Any] = {
            "seq": ev.seq,
            "time": ev.time,
            "coord": ev.coord,
            "tau": ev.tau,
            "g_tilde": ev.g_tilde,
            "g_fresh": ev.g_fresh,
            "gamma": ev.gamma,
            "delta_p": ev.delta_p,
            "value_before": ev.value_before,
            "value_after": ev.value_after,
            "phi_after": ev.phi_after,
        }
        for key in extra_keys:
            row[key] = float(ev.extras.get(key, np.nan))
        for k, x in enumerate(ev.view):
            row[f"view_{k}"] = float(x)
        rows.append(row)
    columns = list(BASE_COLUMNS) + extra_keys + [f"view_{k}" for k in range(trace.n)]
    return pd.DataFrame(rows, columns=columns)


def write_trace_csv(trace: Trace, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace_frame(trace).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    meta = {
        "p0": [float(x) for x in trace.p0],
        "phi0": float(trace.phi0),
        "horizon": float(trace.horizon),
        "seed": int(trace.seed),
        "problem": dict(trace.problem),
        "schedule": dict(trace.schedule),
        "staleness": dict(trace.staleness),
        "finished": bool(trace.finished),
    }
    _meta_path(path).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return path


class TraceFormatError(ValueError):
    """Trace CSV or its sidecar could not be parsed."""


def read_trace_csv(path: str | Path) -> Trace:
    path = Path(path)
    meta_file = _meta_path(path)
    if not path.exists():
        raise TraceFormatError(f"trace file not found: {path}")
    if not meta_file.exists():
        raise TraceFormatError(f"trace metadata not found: {meta_file}")
    try:
        meta = json.loads(meta_file.read_text())
        df = pd.read_csv(path, float_precision="round_trip")
    except (ValueError, OSError) as e:
        raise TraceFormatError(f"cannot parse trace {path}: {e}") from e

    missing = [c for c in BASE_COLUMNS if c not in df.columns]
    if missing:
        raise TraceFormatError(f"trace {path} lacks columns {missing}")
    p0 = as_point(meta["p0"])
    view_cols = [f"view_{k}" for k in range(len(p0))]
    if any(c not in df.columns for c in view_cols):
        raise TraceFormatError(f"trace {path} lacks view columns for dimension {len(p0)}")
    extra_cols = [c for c in df.columns if c not in BASE_COLUMNS and c not in view_cols]

    events: List[UpdateEvent] = []
    views = df[view_cols].to_numpy(dtype=np.float64)
    for i, row in enumerate(df.itertuples(index=False)):
        rec = row._asdict()
        events.append(
            UpdateEvent(
                seq=int(rec["seq"]),
                time=float(rec["time"]),
                coord=int(rec["coord"]),
                tau=float(rec["tau"]),
                view=views[i].copy(),
                g_tilde=float(rec["g_tilde"]),
                g_fresh=float(rec["g_fresh"]),
                gamma=float(rec["gamma"]),
                delta_p=float(rec["delta_p"]),
                value_before=float(rec["value_before"]),
                value_after=float(rec["value_after"]),
                phi_after=float(rec["phi_after"]),
                extras={c: float(rec[c]) for c in extra_cols},
            )
        )
    return Trace(
        p0=p0,
        events=tuple(events),
        horizon=float(meta["horizon"]),
        phi0=float(meta["phi0"]),
        seed=int(meta.get("seed", 0)),
        problem=meta.get("problem", {}),
        schedule=meta.get("schedule", {}),
        staleness=meta.get("staleness", {}),
        finished=bool(meta.get("finished", True)),
    )


def events_from_rows(rows: Sequence[Mapping[str, Any]], n: int) -> Tuple[UpdateEvent, ...]:
    """Build events from plain dicts (hand-written traces in tests and tools)."""
    out = []
    for i, r in enumerate(rows):
        view = as_point(r["view"], n)
        out.append(
            UpdateEvent(
                seq=int(r.get("seq", i)),
                time=float(r["time"]),
                coord=int(r["coord"]),
                tau=float(r["tau"]),
                view=view,
                g_tilde=float(r["g_tilde"]),
                g_fresh=float(r.get("g_fresh", r["g_tilde"])),
                gamma=float(r["gamma"]),
                delta_p=float(r["delta_p"]),
                value_before=float(r["value_before"]),
                value_after=float(r["value_after"]),
                phi_after=float(r.get("phi_after", 0.0)),
                extras=dict(r.get("extras", {})),
            )
        )
    return tuple(out)
