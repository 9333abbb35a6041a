import numpy as np
import pytest

from app.lib.scheduler import SchedulePolicy, StalenessKind
from app.services.markets import (
    LAMBDA_MAX,
    CesBuyer,
    CesMarket,
    LeontiefBuyer,
    LeontiefMarket,
    MarketError,
    excess_demand,
    market_potential,
    tatonnement_step,
)
from app.services.potential_monitor import BLOCKING
from app.services.tatonnement import (
    DRIFT_RANGE,
    MarketState,
    OngoingConfig,
    WarehouseBreach,
    Warehouses,
    equilibrium_oracle,
    lyapunov_ongoing,
    lyapunov_violations,
    market_control_params,
    run_tatonnement,
    warehouse_integrate,
)


# ---------- Oracle ----------
def test_oracle_singleton_leontief(singleton_leontief):
    res = equilibrium_oracle(singleton_leontief)
    assert res.converged
    np.testing.assert_allclose(res.prices, [0.6, 0.4], atol=1e-9)
    assert res.max_excess < 1e-10


def test_oracle_symmetric_ces(symmetric_ces):
    res = equilibrium_oracle(symmetric_ces)
    assert res.converged
    np.testing.assert_allclose(res.prices, [1.0, 1.0], atol=1e-9)


def test_oracle_leontief_continuum_clears_market():
    market = LeontiefMarket(2, [LeontiefBuyer(1.0, (0, 1), (1.0, 1.0))])
    res = equilibrium_oracle(market)
    assert res.converged
    assert res.prices.sum() == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(res.excess, 0.0, atol=1e-10)


@pytest.fixture
def corner_leontief():
    """Good 0 is only wanted together with good 1, whose buyers bid it up: p0 falls to 0 with z0 = -5/6."""
    return LeontiefMarket(2, [LeontiefBuyer(1.0, (0, 1), (1.0, 2.0)), LeontiefBuyer(2.0, (1,), (1.0,))])


def test_oracle_accepts_a_corner_equilibrium(corner_leontief):
    res = equilibrium_oracle(corner_leontief)
    assert res.converged
    assert res.prices[0] < 1e-11
    assert res.prices[1] == pytest.approx(3.0, rel=1e-9)
    assert res.excess[0] == pytest.approx(-5 / 6, rel=1e-9)
    assert res.residual < 1e-10


def test_oracle_reports_failure_when_rounds_run_out(symmetric_ces):
    res = equilibrium_oracle(symmetric_ces, p0=np.array([0.5, 3.0]), max_rounds=5)
    assert not res.converged
    assert res.rounds == 5


# ---------- Warehouses ----------
@pytest.mark.parametrize(
    "v, segments, expected",
    [
        (0.3, [(1.0, 0.0)], 0.3),
        (0.0, [(1.0, 0.5)], -0.5),
        (0.1, [(0.3, 1.0), (0.3, -1.0)], 0.1),
    ],
)
def test_warehouse_integrate(v, segments, expected):
    assert warehouse_integrate(v, segments) == pytest.approx(expected, abs=1e-15)


def test_warehouse_integrate_rejects_negative_durations():
    with pytest.raises(ValueError):
        warehouse_integrate(0.0, [(-0.1, 1.0)])


def test_warehouse_integrate_enforces_capacity():
    assert warehouse_integrate(0.4, [(0.5, 0.5)], 1.0) == pytest.approx(0.15)
    assert warehouse_integrate(0.5, [(1.0, 0.0)], 1.0) == pytest.approx(0.5)
    with pytest.raises(WarehouseBreach) as info:
        warehouse_integrate(0.4, [(0.5, -0.5)], 1.0, good=1, t=2.0)
    assert info.value.good == 1
    assert "t=2" in str(info.value)


def test_warehouses_advance_integrates_and_checks_capacity(symmetric_ces):
    wh = Warehouses(symmetric_ces, OngoingConfig.with_defaults(2, v0=(0.45, -0.45)))
    wh.advance(0.5, np.array([1.0, 1.0]))
    np.testing.assert_allclose(wh.v, [0.45, -0.45], atol=1e-12)
    p = np.array([2.0, 0.5])
    z = excess_demand(symmetric_ces, p)
    assert z[0] < -0.1 and z[1] > 0.1
    with pytest.raises(WarehouseBreach) as info:
        wh.advance(1.0, p)
    assert info.value.good == 0


def test_ongoing_config_defaults():
    cfg = OngoingConfig.with_defaults(3)
    assert cfg.lambdas == pytest.approx((1.0 / 60.0,) * 3)
    assert cfg.kappas == pytest.approx((1.0 / 1200.0,) * 3)
    assert cfg.v0 == (0.0, 0.0, 0.0)
    assert cfg.as_dict()["kappa"] == pytest.approx([1.0 / 1200.0] * 3)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kappas": (1.0 / 60.0, 1.0 / 60.0)},
        {"lam": 0.05},
        {"v0": (0.6, 0.0)},
        {"chi": (1.0, 0.0)},
        {"kappas": (1.0 / 1200.0,)},
    ],
)
def test_ongoing_config_rejects_out_of_bound_parameters(kwargs):
    with pytest.raises(MarketError):
        OngoingConfig.with_defaults(2, **kwargs)


def test_ongoing_config_override_skips_static_bounds():
    cfg = OngoingConfig.with_defaults(2, kappas=(1.0 / 60.0, 1.0 / 60.0), override=True)
    assert cfg.kappas[0] == pytest.approx(cfg.lambdas[0])
    with pytest.raises(MarketError):
        # |kappa v| above 1/10 is refused even with the override
        OngoingConfig.with_defaults(2, v0=(0.3, 0.0), kappas=(1.0, 1.0), override=True)


# ---------- Lyapunov ----------
def test_lyapunov_adds_weighted_warehouse_term(symmetric_ces):
    p_star = np.array([1.0, 1.0])
    base = lyapunov_ongoing(symmetric_ces, MarketState(p_star), p_star, (0.1, 0.1), (0.01, 0.01))
    assert base == pytest.approx(market_potential(symmetric_ces, p_star))
    loaded = lyapunov_ongoing(symmetric_ces, MarketState(p_star, np.array([2.0, 0.0])), p_star, (0.1, 0.1), (0.01, 0.01))
    assert loaded - base == pytest.approx(0.004)


def test_lyapunov_violations_skip_burn_in():
    times = np.arange(15, dtype=np.float64)
    values = 10.0 - 0.1 * times
    values[6] += 0.5
    values[13] += 0.5
    found = lyapunov_violations(times, values, burn_in=10.0)
    assert len(found) == 1
    assert found[0].kind == "lyapunov"
    assert "t=12" in found[0].detail


def test_market_state_requires_positive_prices():
    with pytest.raises(MarketError):
        MarketState(np.array([1.0, 0.0]))


def test_market_control_constants():
    params = market_control_params()
    assert params.c1 == pytest.approx(1.0 / 18.0)
    assert params.c2 == pytest.approx(0.8)
    assert params.xi_policy == "price_ratio"


# ---------- Runs ----------
def test_leontief_run_reaches_budgets(singleton_leontief):
    res = run_tatonnement(singleton_leontief, "leontief", horizon=400.0, seed=3)
    assert res.converged
    assert res.max_excess < 1e-4
    np.testing.assert_allclose(res.state.p, [0.6, 0.4], atol=1e-3)
    assert res.report.summary.ok
    assert res.report.violation_count("update_monotonic") == 0


def test_run_steps_follow_multiplicative_rule(singleton_leontief):
    res = run_tatonnement(singleton_leontief, "leontief", horizon=30.0, seed=1)
    assert len(res.trace) > 40
    for ev in res.trace.events[:50]:
        z_tilde = ev.extras["z_tilde"]
        expected = tatonnement_step(ev.value_before, z_tilde, LAMBDA_MAX, ev.delta_t)
        assert ev.value_after == pytest.approx(expected, rel=1e-12)
        assert ev.extras["z_fresh"] == pytest.approx(-ev.g_fresh)


def test_ces_run_converges_to_symmetric_equilibrium(symmetric_ces):
    res = run_tatonnement(symmetric_ces, "ces", horizon=1200.0, seed=0, p0=[0.7, 1.3])
    assert res.converged
    assert res.max_excess < 1e-6
    np.testing.assert_allclose(res.state.p, res.oracle.prices, rtol=1e-4)
    np.testing.assert_allclose(res.state.p, [1.0, 1.0], rtol=1e-4)
    lo, hi = res.extra["drift_factors"]
    assert DRIFT_RANGE[0] <= lo and hi <= DRIFT_RANGE[1]
    assert res.extra["max_price"] <= res.extra["price_upper_bound"]
    assert res.report.summary.ok
    assert res.report.summary.control["c1"] == pytest.approx(1.0 / 18.0)


def test_ces_run_is_deterministic(symmetric_ces):
    a = run_tatonnement(symmetric_ces, "ces", horizon=20.0, seed=4, p0=[0.7, 1.3])
    b = run_tatonnement(symmetric_ces, "ces", horizon=20.0, seed=4, p0=[0.7, 1.3])
    assert [ev.value_after for ev in a.trace.events] == [ev.value_after for ev in b.trace.events]
    assert [ev.time for ev in a.trace.events] == [ev.time for ev in b.trace.events]


def test_run_rejects_large_lambda_without_override(symmetric_ces):
    with pytest.raises(MarketError):
        run_tatonnement(symmetric_ces, "ces", lam=0.1, horizon=5.0)
    res = run_tatonnement(symmetric_ces, "ces", lam=0.1, horizon=5.0, override=True)
    assert len(res.trace) > 0


def test_run_rejects_mode_mismatch(symmetric_ces, singleton_leontief):
    with pytest.raises(MarketError):
        run_tatonnement(symmetric_ces, "leontief", horizon=5.0)
    with pytest.raises(MarketError):
        run_tatonnement(singleton_leontief, "ces", horizon=5.0)


def test_ongoing_market_drains_warehouses(symmetric_ces):
    cfg = OngoingConfig.with_defaults(2, v0=(0.02, -0.02))
    res = run_tatonnement(symmetric_ces, "ongoing", ongoing=cfg, horizon=2000.0, seed=0)
    assert res.converged
    assert res.max_excess < 1e-3
    assert res.extra["max_warehouse"] < 0.01
    assert res.lyapunov is not None and len(res.lyapunov) == 2001
    assert res.report.violation_count("lyapunov") == 0
    assert res.report.summary.ok
    assert "v" in res.trace.events[0].extras
    assert res.trace.staleness["policy"] == StalenessKind.FRESH.value


def test_ongoing_breach_aborts_with_partial_trace(symmetric_ces):
    cfg = OngoingConfig(chi=(1.0, 1.0), v0=(0.09, 0.09), lambdas=(1 / 60, 1 / 60), kappas=(1.0, 1.0), override=True)
    with pytest.raises(WarehouseBreach) as info:
        run_tatonnement(
            symmetric_ces,
            "ongoing",
            ongoing=cfg,
            horizon=5.0,
            p0=[0.5, 0.5],
            override=True,
            schedule=SchedulePolicy.ROUND_ROBIN,
        )
    err = info.value
    assert err.trace is not None and not err.trace.finished
    assert err.good in (0, 1)
    assert str(err).startswith(f"event {err.event_index}:")


def test_leontief_run_converges_to_a_corner(corner_leontief):
    res = run_tatonnement(corner_leontief, "leontief", horizon=3000.0, seed=5)
    assert res.converged
    assert res.residual < 1e-4
    assert res.max_excess > 0.8
    assert res.extra["clearing_residual"] == res.residual
    assert res.state.p[0] < 1e-12
    assert res.state.p[1] == pytest.approx(3.0, rel=1e-4)
    assert res.report.summary.ok


def test_larger_ces_market_clears():
    buyers = [
        CesBuyer(1.0, -0.5, (1.0, 0.5, 0.2)),
        CesBuyer(2.0, -2.0, (0.3, 1.0, 0.6)),
        CesBuyer(0.5, -1.0, (0.4, 0.4, 1.0)),
    ]
    market = CesMarket(3, buyers)
    res = run_tatonnement(market, "ces", horizon=2000.0, seed=7)
    assert res.max_excess < 1e-6
    np.testing.assert_allclose(res.state.p, res.oracle.prices, rtol=1e-4)


# ---------- Potential on market runs ----------
@pytest.mark.parametrize("schedule", [SchedulePolicy.ROUND_ROBIN, SchedulePolicy.RANDOM_GAP, SchedulePolicy.BURSTY_ADVERSARIAL])
@pytest.mark.parametrize("staleness", [StalenessKind.FRESH, StalenessKind.RANDOM_IN_BOX, StalenessKind.ADVERSARIAL_IN_BOX])
def test_ces_potential_across_schedules(symmetric_ces, schedule, staleness):
    res = run_tatonnement(symmetric_ces, "ces", horizon=20.0, seed=2, schedule=schedule, staleness=staleness, p0=[0.8, 1.25])
    report = res.report
    assert report.violation_count("update_monotonic") == 0
    assert report.violation_count("between_updates") == 0
    assert report.violation_count("A3") == 0 and report.violation_count("A4") == 0
    assert not set(report.summary.violation_counts) & BLOCKING


def test_leontief_chain_potential_never_rises():
    market = LeontiefMarket(
        3,
        [LeontiefBuyer(1.0, (0, 1), (1.0, 1.0)), LeontiefBuyer(1.0, (1, 2), (1.0, 1.0)), LeontiefBuyer(1.0, (2,), (2.0,))],
    )
    res = run_tatonnement(market, "leontief", horizon=3000.0, seed=5)
    assert res.report.violation_count("update_monotonic") == 0
    assert res.report.violation_count("between_updates") == 0
    assert res.report.summary.ok
    assert res.converged
    np.testing.assert_allclose(res.state.p[1:], [1.5, 1.5], rtol=1e-4)
    assert res.max_excess == pytest.approx(1 / 3, rel=1e-3)
