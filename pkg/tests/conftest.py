import json
from pathlib import Path

import numpy as np
import pytest

from app.config import reset_settings
from app.lib.trace import Trace, events_from_rows
from app.services.linear_systems import SpdObjective, SpdProblem
from app.services.markets import CesBuyer, CesMarket, LeontiefBuyer, LeontiefMarket


@pytest.fixture(autouse=True)
def _fresh_settings(monkeypatch):
    monkeypatch.delenv("AGDLAB_LOG", raising=False)
    monkeypatch.delenv("AGDLAB_MAX_EVENTS", raising=False)
    reset_settings()
    yield
    reset_settings()


@pytest.fixture
def coupled_spd():
    return SpdProblem(A=np.array([[4.0, 1.0], [1.0, 3.0]]), b=np.array([1.0, 2.0]))


@pytest.fixture
def coupled_obj(coupled_spd):
    return SpdObjective(coupled_spd)


@pytest.fixture
def symmetric_ces():
    """One buyer, rho = -1, equal weights, budget 2: equilibrium at (1, 1)."""
    return CesMarket(2, [CesBuyer(2.0, -1.0, (1.0, 1.0))])


@pytest.fixture
def singleton_leontief():
    """Each good wanted by exactly one buyer: equilibrium prices equal the budgets."""
    return LeontiefMarket(2, [LeontiefBuyer(0.6, (0,), (1.0,)), LeontiefBuyer(0.4, (1,), (1.0,))])


@pytest.fixture
def two_event_trace():
    """Coordinate 1 moves 0 -> 0.1 at t = 0.5, coordinate 0 then moves at t = 1."""
    rows = [
        {"time": 0.5, "coord": 1, "tau": 0.0, "view": [0.0, 0.0], "g_tilde": -0.2, "gamma": 1.0,
         "delta_p": 0.1, "value_before": 0.0, "value_after": 0.1},
        {"time": 1.0, "coord": 0, "tau": 0.0, "view": [0.0, 0.1], "g_tilde": 0.1, "gamma": 1.0,
         "delta_p": -0.1, "value_before": 0.0, "value_after": -0.1},
    ]
    return Trace(p0=np.zeros(2), events=events_from_rows(rows, 2), horizon=1.0, phi0=0.0)


@pytest.fixture
def write_json(tmp_path):
    def write(name: str, doc) -> Path:
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc))
        return path

    return write


@pytest.fixture
def write_mtx(tmp_path):
    """Dense Matrix Market writer (array format) plus a plain-text rhs."""

    def write(A, b, stem: str = "system"):
        A = np.asarray(A, dtype=np.float64)
        mtx = tmp_path / f"{stem}.mtx"
        lines = ["%%MatrixMarket matrix array real general", f"{A.shape[0]} {A.shape[1]}"]
        lines += [f"{x:.17g}" for x in A.T.reshape(-1)]
        mtx.write_text("\n".join(lines) + "\n")
        rhs = tmp_path / f"{stem}_b.txt"
        np.savetxt(rhs, np.asarray(b, dtype=np.float64))
        return mtx, rhs

    return write
