from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError

from app.lib.scheduler import MAX_HORIZON, SchedulePolicy, StalenessKind
from app.services.markets import ONGOING_LAMBDA_MAX, CesBuyer, CesMarket, LeontiefBuyer, LeontiefMarket, Market
from app.services.tatonnement import OngoingConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Experiment or market document failed to load or validate."""


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


# ---------- Markets ----------
class CesBuyerDoc(StrictModel):
    e: float
    rho: float
    a: List[float]


class LeontiefBuyerDoc(StrictModel):
    e: float
    S: List[int]
    b: List[float]


class MarketDoc(StrictModel):
    """{goods, buyers: [{e, rho, a}] | [{e, S, b}]}, plus chi/v0/lambda/kappa for ongoing markets."""

    kind: Optional[Literal["ces", "leontief"]] = None
    goods: int = Field(gt=0)
    buyers: List[Union[CesBuyerDoc, LeontiefBuyerDoc]] = Field(min_length=1)
    chi: Optional[List[float]] = None
    v0: Optional[List[float]] = None
    lam: Optional[List[float]] = Field(default=None, alias="lambda")
    kappa: Optional[List[float]] = None

    def market_kind(self) -> str:
        kinds = {"ces" if isinstance(b, CesBuyerDoc) else "leontief" for b in self.buyers}
        if len(kinds) != 1:
            raise ConfigError("a market mixes CES and Leontief buyers")
        kind = kinds.pop()
        if self.kind is not None and self.kind != kind:
            raise ConfigError(f"market declares kind {self.kind!r} but its buyers are {kind}")
        return kind

    def to_market(self) -> Market:
        if self.market_kind() == "ces":
            return CesMarket(self.goods, [CesBuyer(b.e, b.rho, tuple(b.a)) for b in self.buyers])
        return LeontiefMarket(self.goods, [LeontiefBuyer(b.e, tuple(b.S), tuple(b.b)) for b in self.buyers])

    def ongoing(self, override: bool = False) -> OngoingConfig:
        return OngoingConfig.with_defaults(
            self.goods,
            chi=self.chi if self.chi is not None else 1.0,
            v0=self.v0,
            lam=self.lam if self.lam is not None else ONGOING_LAMBDA_MAX,
            kappas=self.kappa,
            override=override,
        )


# ---------- Problems ----------
class TermSpec(StrictModel):
    kind: Literal["zero", "quadratic", "softplus"] = "zero"
    weight: Optional[float] = None
    center: Optional[float] = None
    scale: Optional[float] = None

    def as_dict(self) -> Dict[str, Any]:
        return self.model_dump(exclude_none=True)


class SpdSpec(StrictModel):
    kind: Literal["spd"]
    matrix: str
    rhs: str
    p0: Optional[Union[str, List[float]]] = None
    gammas: Optional[List[float]] = None
    tolerance: float = Field(default=1e-8, gt=0)


class CompositeSpec(StrictModel):
    kind: Literal["composite"]
    matrix: str
    rhs: str
    terms: Union[TermSpec, List[TermSpec]] = Field(default_factory=TermSpec)
    p0: Optional[Union[str, List[float]]] = None
    tolerance: float = Field(default=1e-8, gt=0)


class MarketSpec(StrictModel):
    kind: Literal["ces", "leontief", "ongoing"]
    market: Union[str, MarketDoc]
    lam: Optional[float] = Field(default=None, alias="lambda")
    p0: Optional[List[float]] = None
    tolerance: Optional[float] = Field(default=None, gt=0)


class ScheduleSpec(StrictModel):
    policy: SchedulePolicy = SchedulePolicy.RANDOM_GAP
    params: Dict[str, Union[int, float]] = Field(default_factory=dict)


class StalenessSpec(StrictModel):
    policy: StalenessKind = StalenessKind.RANDOM_IN_BOX
    seed: Optional[int] = None


class ExperimentConfig(StrictModel):
    schema_version: Literal[1] = SCHEMA_VERSION
    problem: Union[SpdSpec, CompositeSpec, MarketSpec] = Field(discriminator="kind")
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    staleness: Optional[StalenessSpec] = None
    horizon: float = Field(default=200.0, gt=0, le=MAX_HORIZON)
    seed: int = 0
    output: Optional[str] = None

    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @property
    def base_dir(self) -> Path:
        return self._base_dir

    def resolve(self, path: str) -> Path:
        """Config-relative path."""
        p = Path(path)
        return p if p.is_absolute() else self._base_dir / p


def _read_json(path: Path) -> Any:
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e


def _first_error(e: ValidationError) -> str:
    err = e.errors()[0]
    where = ".".join(str(x) for x in err.get("loc", ()))
    return f"{where}: {err.get('msg')}" if where else str(err.get("msg"))


def load_experiment(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    raw = _read_json(path)
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {_first_error(e)} ({e.error_count()} error(s))") from e
    cfg._base_dir = path.resolve().parent
    return cfg


def load_market_doc(source: Union[str, Path, MarketDoc, Dict[str, Any]], base_dir: Optional[Path] = None) -> MarketDoc:
    if isinstance(source, MarketDoc):
        return source
    if isinstance(source, dict):
        raw = source
        where = "market document"
    else:
        path = Path(source)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        raw = _read_json(path)
        where = str(path)
    try:
        return MarketDoc.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{where}: {_first_error(e)}") from e
