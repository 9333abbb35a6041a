from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np
from numpy.typing import NDArray

# A point is a plain float64 vector; coordinates are 0-based.
Point = NDArray[np.float64]

# Relative slack used when deciding whether a point sits inside a box.
BOX_TOL = 1e-12


class DomainError(ValueError):
    """Point outside an objective's domain (e.g. a nonpositive price)."""


def as_point(coords: Sequence[float] | NDArray, dim: Optional[int] = None) -> Point:
    p = np.array(coords, dtype=np.float64).reshape(-1)
    if dim is not None and p.shape[0] != dim:
        raise DomainError(f"point has {p.shape[0]} coordinates, expected {dim}")
    if not np.all(np.isfinite(p)):
        raise DomainError("point has non-finite coordinates")
    return p


# ---------- Boxes ----------
@dataclass(frozen=True, eq=False)
class CoordBox:
    """Per-coordinate interval product with one pinned coordinate.

    The admissible set of stale views for an update to ``pinned_coord``:
    every other coordinate ranges over the values it took in a time window,
    the pinned one is fixed at ``pinned_value``.
    """

    lo: Point
    hi: Point
    pinned_coord: int
    pinned_value: float

    def __post_init__(self) -> None:
        lo = as_point(self.lo)
        hi = as_point(self.hi, lo.shape[0])
        j = int(self.pinned_coord)
        if not 0 <= j < lo.shape[0]:
            raise ValueError(f"pinned coordinate {j} out of range for dimension {lo.shape[0]}")
        if np.any(lo > hi):
            raise ValueError("box has lo > hi")
        s = float(self.pinned_value)
        if lo[j] != s or hi[j] != s:
            raise ValueError("pinned coordinate must have lo == hi == pinned_value")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "pinned_coord", j)
        object.__setattr__(self, "pinned_value", s)

    @classmethod
    def degenerate(cls, p: Point, j: int) -> "CoordBox":
        p = as_point(p)
        return cls(lo=p.copy(), hi=p.copy(), pinned_coord=j, pinned_value=float(p[j]))

    @property
    def dim(self) -> int:
        return int(self.lo.shape[0])

    @property
    def free_coords(self) -> Tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.hi > self.lo))

    def contains(self, p: Point, tol: float = BOX_TOL) -> bool:
        p = np.asarray(p, dtype=np.float64)
        if p.shape != self.lo.shape:
            return False
        slack = tol * np.maximum(1.0, np.maximum(np.abs(self.lo), np.abs(self.hi)))
        return bool(np.all(p >= self.lo - slack) and np.all(p <= self.hi + slack))

    def is_subset_of(self, other: "CoordBox") -> bool:
        return bool(np.all(self.lo >= other.lo) and np.all(self.hi <= other.hi))

    def corners(self) -> Iterator[Point]:
        """All 2^m corners over the m non-degenerate coordinates."""
        free = self.free_coords
        for bits in itertools.product((False, True), repeat=len(free)):
            c = self.lo.copy()
            for k, up in zip(free, bits):
                if up:
                    c[k] = self.hi[k]
            yield c

    def sample(self, rng: np.random.Generator) -> Point:
        return rng.uniform(self.lo, self.hi)


# ---------- Objective contract ----------
@runtime_checkable
class ObjectiveHandle(Protocol):
    """What every minimized function provides.

    ``hessian_bound(j, k, box)`` bounds max |d^2 phi / dp_j dp_k| over the box
    and must be monotone in box inclusion. ``grad_extremes`` returns the exact
    (min, max) of grad_j over a box, or None when it is not known exactly.
    """

    dim: int
    strong_convexity: Optional[float]
    constant_hessian: bool

    def check_domain(self, p: Point) -> None: ...

    def value(self, p: Point) -> float: ...

    def grad_coord(self, p: Point, j: int) -> float: ...

    def hessian_bound(self, j: int, k: int, box: CoordBox) -> float: ...

    def grad_extremes(self, j: int, box: CoordBox) -> Optional[Tuple[float, float]]: ...


def _check_index(obj: ObjectiveHandle, j: int) -> int:
    j = int(j)
    if not 0 <= j < obj.dim:
        raise IndexError(f"coordinate {j} out of range for dimension {obj.dim}")
    return j


def value(obj: ObjectiveHandle, p: Point) -> float:
    p = as_point(p, obj.dim)
    obj.check_domain(p)
    v = float(obj.value(p))
    if not math.isfinite(v):
        raise DomainError(f"objective value is not finite at {p!r}")
    return v


def grad_coord(obj: ObjectiveHandle, p: Point, j: int) -> float:
    p = as_point(p, obj.dim)
    obj.check_domain(p)
    return float(obj.grad_coord(p, _check_index(obj, j)))


def full_gradient(obj: ObjectiveHandle, p: Point) -> Point:
    """Whole gradient; uses the objective's vectorized ``gradient`` when it has one."""
    p = as_point(p, obj.dim)
    obj.check_domain(p)
    fast = getattr(obj, "gradient", None)
    if fast is not None:
        return np.asarray(fast(p), dtype=np.float64)
    return np.array([obj.grad_coord(p, j) for j in range(obj.dim)], dtype=np.float64)


def hessian_bound(obj: ObjectiveHandle, j: int, k: int, box: CoordBox) -> float:
    if box.dim != obj.dim:
        raise ValueError(f"box dimension {box.dim} != objective dimension {obj.dim}")
    obj.check_domain(box.lo)
    h = float(obj.hessian_bound(_check_index(obj, j), _check_index(obj, k), box))
    if h < 0 or not math.isfinite(h):
        raise ValueError(f"hessian bound must be finite and nonnegative, got {h}")
    return h


def sampled_grad_extremes(
    obj: ObjectiveHandle,
    j: int,
    box: CoordBox,
    rng: Optional[np.random.Generator] = None,
    max_corners: int = 12,
    samples: int = 1000,
) -> Tuple[float, float]:
    """Gradient range over a box by corner enumeration, or random sampling for wide boxes."""
    if len(box.free_coords) <= max_corners:
        points: Sequence[Point] = list(box.corners())
    else:
        rng = rng or np.random.default_rng(0)
        points = [box.sample(rng) for _ in range(samples)]
    values = [obj.grad_coord(q, j) for q in points]
    return float(min(values)), float(max(values))


# ---------- Finite differences ----------
@dataclass(frozen=True)
class FdCheck:
    analytic: float
    central_difference: float
    rel_err: float


def fd_gradient_check(obj: ObjectiveHandle, p: Point, j: int, h: float = 1e-6) -> FdCheck:
    p = as_point(p, obj.dim)
    j = _check_index(obj, j)
    up, down = p.copy(), p.copy()
    up[j] += h
    down[j] -= h
    analytic = grad_coord(obj, p, j)
    fd = (value(obj, up) - value(obj, down)) / (2.0 * h)
    return FdCheck(analytic=analytic, central_difference=fd, rel_err=abs(analytic - fd) / max(1.0, abs(analytic)))
