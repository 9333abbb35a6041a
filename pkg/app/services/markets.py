from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from app.lib.objective import CoordBox, DomainError, Point, as_point

# Largest lambda for which the multiplicative price rule is controlled.
LAMBDA_MAX = 1.0 / 23.46
# Ongoing markets: lambda bound, kappa/lambda bound, and the |kappa v| ceiling.
ONGOING_LAMBDA_MAX = 1.0 / 60.0
KAPPA_RATIO_MAX = 1.0 / 10.0
KAPPA_V_MAX = 1.0 / 10.0
# relative price below which a good counts as free when checking market clearing
PRICE_FLOOR = 1e-12


class MarketError(ValueError):
    """Malformed market or a step-constant bound violation."""


# ---------- Models ----------
@dataclass(frozen=True)
class CesBuyer:
    budget: float
    rho: float
    weights: Tuple[float, ...]

    def __post_init__(self) -> None:
        if not (self.budget > 0 and math.isfinite(self.budget)):
            raise MarketError(f"budget must be positive, got {self.budget}")
        if not (self.rho < 0 and math.isfinite(self.rho)):
            raise MarketError(f"rho must be negative (complements), got {self.rho}")
        w = tuple(float(a) for a in self.weights)
        if any(a < 0 or not math.isfinite(a) for a in w) or not any(a > 0 for a in w):
            raise MarketError("CES weights must be nonnegative with at least one positive")
        object.__setattr__(self, "weights", w)

    @property
    def theta(self) -> float:
        return self.rho / (self.rho - 1.0)


@dataclass(frozen=True)
class LeontiefBuyer:
    budget: float
    goods: Tuple[int, ...]
    coefs: Tuple[float, ...]

    def __post_init__(self) -> None:
        if not (self.budget > 0 and math.isfinite(self.budget)):
            raise MarketError(f"budget must be positive, got {self.budget}")
        goods = tuple(int(j) for j in self.goods)
        coefs = tuple(float(b) for b in self.coefs)
        if not goods:
            raise MarketError("Leontief buyer needs a nonempty good set")
        if len(set(goods)) != len(goods):
            raise MarketError("Leontief good set has repeats")
        if len(coefs) != len(goods) or any(not (b > 0 and math.isfinite(b)) for b in coefs):
            raise MarketError("Leontief coefficients must be positive, one per good in the set")
        object.__setattr__(self, "goods", goods)
        object.__setattr__(self, "coefs", coefs)


class CesMarket:
    """Fisher market, unit supply per good, complementary-CES buyers."""

    kind = "ces"

    def __init__(self, n: int, buyers: Sequence[CesBuyer]):
        if n < 1 or not buyers:
            raise MarketError("market needs at least one good and one buyer")
        self.n = int(n)
        self.buyers = tuple(buyers)
        for i, b in enumerate(self.buyers):
            if len(b.weights) != self.n:
                raise MarketError(f"buyer {i} has {len(b.weights)} weights for {self.n} goods")
        a = np.array([b.weights for b in self.buyers])
        unwanted = np.flatnonzero(~(a > 0).any(axis=0))
        if len(unwanted):
            raise MarketError(f"goods {unwanted.tolist()} are desired by no buyer")
        self.budgets = np.array([b.budget for b in self.buyers])
        self.rhos = np.array([b.rho for b in self.buyers])
        self.thetas = self.rhos / (self.rhos - 1.0)
        # a_ij^{1/(1 - rho_i)}
        with np.errstate(divide="ignore"):
            self.w = np.where(a > 0, np.power(a, (1.0 / (1.0 - self.rhos))[:, None]), 0.0)

    def demand_matrix(self, p: Point) -> np.ndarray:
        pt = np.power(p[None, :], self.thetas[:, None])
        terms = self.w * pt
        denom = terms.sum(axis=1)
        return self.budgets[:, None] * terms / p[None, :] / denom[:, None]

    def log_utilities(self, p: Point) -> np.ndarray:
        denom = (self.w * np.power(p[None, :], self.thetas[:, None])).sum(axis=1)
        return np.log(self.budgets) - np.log(denom) / self.thetas


class LeontiefMarket:
    """Fisher market, unit supply per good, Leontief buyers."""

    kind = "leontief"

    def __init__(self, n: int, buyers: Sequence[LeontiefBuyer]):
        if n < 1 or not buyers:
            raise MarketError("market needs at least one good and one buyer")
        self.n = int(n)
        self.buyers = tuple(buyers)
        inv_b = np.zeros((len(self.buyers), self.n))
        for i, b in enumerate(self.buyers):
            for j, c in zip(b.goods, b.coefs):
                if not 0 <= j < self.n:
                    raise MarketError(f"buyer {i} refers to good {j} outside 0..{self.n - 1}")
                inv_b[i, j] = 1.0 / c
        unwanted = np.flatnonzero(~(inv_b > 0).any(axis=0))
        if len(unwanted):
            raise MarketError(f"goods {unwanted.tolist()} are desired by no buyer")
        self.inv_b = inv_b
        self.budgets = np.array([b.budget for b in self.buyers])
        self.thetas = np.ones(len(self.buyers))

    def demand_matrix(self, p: Point) -> np.ndarray:
        cost = self.inv_b @ p
        return (self.budgets / cost)[:, None] * self.inv_b

    def log_utilities(self, p: Point) -> np.ndarray:
        return np.log(self.budgets) - np.log(self.inv_b @ p)


Market = Union[CesMarket, LeontiefMarket]


def _prices(p: Sequence[float] | Point, n: int) -> Point:
    p = as_point(p, n)
    if np.any(p <= 0):
        raise DomainError(f"prices must be strictly positive, got {p!r}")
    return p


# ---------- Demand ----------
def ces_demand(market: CesMarket, i: int, p: Point) -> Point:
    return market.demand_matrix(_prices(p, market.n))[i]


def leontief_demand(market: LeontiefMarket, i: int, p: Point) -> Point:
    return market.demand_matrix(_prices(p, market.n))[i]


def demand_matrix(market: Market, p: Point) -> np.ndarray:
    """Row i is buyer i's bundle."""
    return market.demand_matrix(_prices(p, market.n))


def excess_demand(market: Market, p: Point) -> Point:
    return demand_matrix(market, p).sum(axis=0) - 1.0


def clearing_residual(p: Point, z: Point, price_floor: float = PRICE_FLOOR) -> float:
    """Complementary-slackness residual: |z_j| on priced goods, max(z_j, 0) on goods priced at ~0.

    A good counts as free once p_j <= price_floor * max(p).
    """
    p = np.asarray(p, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    free = p <= price_floor * float(np.max(p))
    return float(np.max(np.where(free, np.maximum(z, 0.0), np.abs(z))))


def market_potential(market: Market, p: Point) -> float:
    """sum_j p_j + sum_i e_i log u_i(p); its gradient is minus the excess demand."""
    p = _prices(p, market.n)
    return float(p.sum() + market.budgets @ market.log_utilities(p))


# ---------- Price rules ----------
def tatonnement_step(p_j: float, z_tilde: float, lam: float, delta_t: float, override: bool = False) -> float:
    """p_j (1 + lambda min{z~, 1} dt)."""
    if lam <= 0 or (lam > LAMBDA_MAX and not override):
        raise MarketError(f"lambda must lie in (0, 1/23.46], got {lam}")
    if not 0 < delta_t <= 1 or p_j <= 0:
        raise MarketError("need 0 < delta_t <= 1 and a positive price")
    return p_j * (1.0 + lam * min(z_tilde, 1.0) * delta_t)


def check_ongoing_bounds(lam: float, kappa: float, override: bool = False) -> None:
    if lam <= 0 or kappa < 0:
        raise MarketError(f"lambda must be positive and kappa nonnegative, got {lam}, {kappa}")
    if override:
        return
    if lam > ONGOING_LAMBDA_MAX:
        raise MarketError(f"lambda {lam} exceeds 1/60")
    if kappa / lam > KAPPA_RATIO_MAX:
        raise MarketError(f"kappa/lambda = {kappa / lam:.4g} exceeds 1/10")


def ongoing_step(
    p_j: float, z_tilde: float, v_j: float, lam: float, kappa: float, delta_t: float, override: bool = False
) -> float:
    """p_j (1 + lambda min{z~ - kappa v, 1} dt); raises when |kappa v| > 1/10."""
    check_ongoing_bounds(lam, kappa, override)
    if abs(kappa * v_j) > KAPPA_V_MAX:
        raise MarketError(f"|kappa v| = {abs(kappa * v_j):.4g} exceeds 1/10; kappa is misconfigured")
    if not 0 < delta_t <= 1 or p_j <= 0:
        raise MarketError("need 0 < delta_t <= 1 and a positive price")
    return p_j * (1.0 + lam * min(z_tilde - kappa * v_j, 1.0) * delta_t)


def rule_gamma(p_j: float, z_eff: float, lam: float) -> float:
    """The step-size denominator that turns the multiplicative rule into -g~/gamma dt."""
    return max(1.0, z_eff) / (lam * p_j)


# ---------- Hessian bound ----------
def ces_hessian_bound(market: Market, j: int, k: int, box: CoordBox, reference: Optional[Point] = None) -> float:
    """Bound on |d^2 phi / dp_j dp_k| over a positive box.

    Off-diagonal: sum_i x_ij x_ik / e_i. Diagonal: sum_i theta_i x_ij^2/e_i +
    (1 - theta_i) x_ij/p_j. Demands fall in every price, so both are largest at
    the box's lower corner; with an explicit reference point the values there
    are inflated by (1/r1)^2, r1 = min_k lo_k/ref_k.
    """
    if np.any(box.lo <= 0):
        raise DomainError("Hessian box touches nonpositive prices")
    if reference is None:
        at, scale = box.lo, 1.0
    else:
        at = _prices(reference, market.n)
        r1 = float(np.min(box.lo / at))
        scale = (1.0 / r1) ** 2
    x = market.demand_matrix(np.asarray(at, dtype=np.float64))
    e = market.budgets
    if j != k:
        return scale * float(np.sum(x[:, j] * x[:, k] / e))
    th = market.thetas
    return scale * float(np.sum(th * x[:, j] ** 2 / e + (1.0 - th) * x[:, j] / at[j]))


class MarketObjective:
    """The market potential as a minimized objective."""

    constant_hessian = False
    strong_convexity: Optional[float] = None

    def __init__(self, market: Market):
        self.market = market
        self.dim = market.n

    def check_domain(self, p: Point) -> None:
        if np.any(np.asarray(p) <= 0):
            raise DomainError("prices must be strictly positive")

    def value(self, p: Point) -> float:
        return market_potential(self.market, p)

    def grad_coord(self, p: Point, j: int) -> float:
        self.check_domain(p)
        return float(1.0 - self.market.demand_matrix(p)[:, j].sum())

    def gradient(self, p: Point) -> Point:
        return -excess_demand(self.market, p)

    def hessian_bound(self, j: int, k: int, box: CoordBox) -> float:
        return ces_hessian_bound(self.market, j, k, box)

    def grad_extremes(self, j: int, box: CoordBox) -> Optional[Tuple[float, float]]:
        return None


def market_document(market: Market) -> Dict[str, Any]:
    """Plain-JSON form of a market, the same shape the market files use."""
    if isinstance(market, CesMarket):
        buyers = [{"e": b.budget, "rho": b.rho, "a": list(b.weights)} for b in market.buyers]
        return {"kind": "ces", "goods": market.n, "buyers": buyers}
    buyers = [{"e": b.budget, "S": list(b.goods), "b": list(b.coefs)} for b in market.buyers]
    return {"kind": "leontief", "goods": market.n, "buyers": buyers}
