import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from main import main

CES_MARKET = {"goods": 2, "buyers": [{"e": 2.0, "rho": -1.0, "a": [1.0, 1.0]}]}
DEMOS = Path(__file__).resolve().parents[1] / "demos"
DEMO_COMMANDS = {
    "spd": "solve-spd",
    "composite": "solve-composite",
    "ces": "market-ces",
    "leontief": "market-leontief",
    "ongoing": "market-ongoing",
}


def _run(capsys, *argv):
    code = main([*argv, "--json"])
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1]) if out else None


@pytest.fixture
def spd_config(write_mtx, write_json):
    write_mtx(np.eye(2), [1.0, 2.0])

    def make(**overrides):
        problem = {"kind": "spd", "matrix": "system.mtx", "rhs": "system_b.txt", **overrides.pop("problem", {})}
        return write_json(overrides.pop("name", "spd.json"), {"problem": problem, "horizon": 30.0, "seed": 1, **overrides})

    return make


@pytest.fixture
def ces_config(write_json):
    def make(name="ces.json", horizon=800.0, **problem):
        return write_json(name, {"problem": {"kind": "ces", "market": CES_MARKET, "p0": [0.9, 1.1], **problem}, "horizon": horizon})

    return make


# ---------- Linear systems ----------
def test_solve_spd_writes_artifacts(capsys, tmp_path, spd_config):
    out = tmp_path / "out"
    code, doc = _run(capsys, "solve-spd", "--config", str(spd_config()), "--out", str(out))
    assert code == 0
    assert doc["converged"] is True and doc["monitor_ok"] is True
    for name in ("trace.csv", "trace.meta.json", "monitor.json", "solution.txt"):
        assert (out / name).exists()
    np.testing.assert_allclose(np.loadtxt(out / "solution.txt"), [1.0, 2.0], atol=1e-8)
    assert doc["summary"]["residual_inf"] < 1e-8


def test_missing_rhs_is_a_config_error(capsys, tmp_path, spd_config):
    code, doc = _run(capsys, "solve-spd", "--config", str(spd_config(problem={"rhs": "nope.txt"})), "--out", str(tmp_path / "o"))
    assert code == 2
    assert doc["exit_code"] == 2 and "nope.txt" in doc["error"]


def test_unknown_config_key_is_rejected(capsys, tmp_path, spd_config):
    code, doc = _run(capsys, "solve-spd", "--config", str(spd_config(colour="blue")), "--out", str(tmp_path / "o"))
    assert code == 2
    assert "colour" in doc["error"]


def test_short_horizon_reports_not_converged(capsys, tmp_path, ces_config):
    code, doc = _run(capsys, "market-ces", "--config", str(ces_config(horizon=5.0)), "--out", str(tmp_path / "o"))
    assert code == 3
    assert doc["converged"] is False and doc["monitor_ok"] is True


def test_unsafe_gammas_report_violations(capsys, tmp_path, spd_config):
    cfg = spd_config(problem={"gammas": [0.3, 0.3]})
    code, doc = _run(capsys, "solve-spd", "--config", str(cfg), "--horizon", "20", "--out", str(tmp_path / "o"))
    assert code == 4
    assert doc["monitor_ok"] is False
    assert doc["summary"]["violations"]["A1"] > 0


def test_runs_are_byte_identical(capsys, tmp_path, spd_config):
    cfg = str(spd_config())
    for name in ("a", "b"):
        assert _run(capsys, "solve-spd", "--config", cfg, "--out", str(tmp_path / name))[0] == 0
    for name in ("trace.csv", "monitor.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_the_schedule(capsys, tmp_path, spd_config):
    cfg = str(spd_config())
    _run(capsys, "solve-spd", "--config", cfg, "--out", str(tmp_path / "a"))
    _run(capsys, "solve-spd", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "b"))
    assert (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "b" / "trace.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "trace.meta.json").read_text())["seed"] == 2


# ---------- Markets ----------
def test_large_lambda_is_refused(capsys, tmp_path, ces_config):
    code, doc = _run(capsys, "market-ces", "--config", str(ces_config(**{"lambda": 0.1})), "--out", str(tmp_path / "o"))
    assert code == 2
    assert "lambda" in doc["error"]


def test_ongoing_kappa_above_bound_is_refused(capsys, tmp_path, write_json):
    market = {**CES_MARKET, "kappa": [1 / 60, 1 / 60]}
    cfg = write_json("ongoing.json", {"problem": {"kind": "ongoing", "market": market}, "horizon": 50.0})
    code, _ = _run(capsys, "market-ongoing", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 2


def test_ongoing_breach_writes_partial_trace(capsys, tmp_path, write_json):
    market = {**CES_MARKET, "v0": [0.09, 0.09], "kappa": [1.0, 1.0]}
    cfg = write_json(
        "breach.json",
        {
            "problem": {"kind": "ongoing", "market": market, "p0": [0.5, 0.5]},
            "schedule": {"policy": "round_robin"},
            "horizon": 5.0,
        },
    )
    out = tmp_path / "o"
    code, doc = _run(capsys, "market-ongoing", "--config", str(cfg), "--out", str(out), "--override-bounds")
    assert code == 5
    assert doc["error"].startswith("event 0:")
    assert (out / "trace.partial.csv").exists()
    meta = json.loads((out / "trace.partial.meta.json").read_text())
    assert meta["finished"] is False


def test_mode_mismatch_is_a_config_error(capsys, tmp_path, ces_config):
    code, _ = _run(capsys, "market-leontief", "--config", str(ces_config()), "--out", str(tmp_path / "o"))
    assert code == 2


# ---------- Verify and report ----------
@pytest.fixture
def ces_run(capsys, tmp_path, ces_config):
    cfg = ces_config()
    out = tmp_path / "run"
    code, doc = _run(capsys, "market-ces", "--config", str(cfg), "--out", str(out))
    assert code == 0
    assert doc["summary"]["max_excess"] < 1e-6
    return cfg, out


def test_verify_replays_a_market_run(capsys, tmp_path, ces_run):
    cfg, out = ces_run
    code, doc = _run(capsys, "verify", "--trace", str(out / "trace.csv"), "--config", str(cfg), "--out", str(tmp_path / "v"))
    assert code == 0
    assert doc["monitor_ok"] is True
    # the trace carries its own market, so the config is optional
    code, _ = _run(capsys, "verify", "--trace", str(out / "trace.csv"), "--out", str(tmp_path / "w"))
    assert code == 0


def test_verify_rejects_edited_trace(capsys, tmp_path, ces_run):
    _, out = ces_run
    path = out / "trace.csv"
    df = pd.read_csv(path, float_precision="round_trip")
    df.loc[3, "delta_p"] += 0.01
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    code, doc = _run(capsys, "verify", "--trace", str(path), "--out", str(tmp_path / "v"))
    assert code == 2
    assert doc["error"].startswith("replay mismatch at row 3")


def test_verify_spd_trace_needs_config(capsys, tmp_path, spd_config):
    out = tmp_path / "run"
    assert _run(capsys, "solve-spd", "--config", str(spd_config()), "--out", str(out))[0] == 0
    code, doc = _run(capsys, "verify", "--trace", str(out / "trace.csv"), "--out", str(tmp_path / "v"))
    assert code == 2
    assert "--config" in doc["error"]


def test_report_table_and_html(capsys, tmp_path, spd_config):
    out = tmp_path / "run"
    assert _run(capsys, "solve-spd", "--config", str(spd_config()), "--out", str(out))[0] == 0
    html = tmp_path / "report.html"
    code, doc = _run(capsys, "report", str(out / "monitor.json"), "--html", str(html))
    assert code == 0
    assert doc["summary"]["rows"][0]["ok"] is True
    assert "<table>" in html.read_text()


def test_report_on_missing_file(capsys, tmp_path):
    code, doc = _run(capsys, "report", str(tmp_path / "none.json"))
    assert code == 2
    assert "not found" in doc["error"]


def test_plain_output_lists_artifacts(capsys, tmp_path, spd_config):
    code = main(["solve-spd", "--config", str(spd_config()), "--out", str(tmp_path / "o")])
    assert code == 0
    out = capsys.readouterr().out
    assert "residual_inf=" in out
    assert "monitor: " in out


# ---------- Shipped demos ----------
@pytest.mark.parametrize(
    "config",
    sorted(p for p in DEMOS.glob("*/*.json") if not p.name.endswith(".market.json")),
    ids=lambda p: p.stem,
)
def test_shipped_demo_converges_cleanly(capsys, tmp_path, config):
    kind = json.loads(config.read_text())["problem"]["kind"]
    code, doc = _run(capsys, DEMO_COMMANDS[kind], "--config", str(config), "--out", str(tmp_path / config.stem))
    assert code == 0, doc
    assert doc["converged"] is True and doc["monitor_ok"] is True
