import numpy as np
import pytest

from app.config import get_settings, reset_settings
from app.lib.scheduler import ScheduleError, SchedulePolicy, StalenessKind, StalenessPolicy, validate_trace
from app.services.agd_engine import (
    RunAborted,
    RunConfig,
    StepSizeRule,
    compute_update,
    run,
    run_synchronous_baseline,
)
from app.services.linear_systems import SpdObjective, SpdProblem, spd_gamma_bound
from app.services.markets import MarketObjective


@pytest.fixture
def identity_obj():
    return SpdObjective(SpdProblem(A=np.eye(2), b=np.array([1.0, 2.0])))


# ---------- Update rule ----------
def test_compute_update():
    assert compute_update(0.5, 2.0, 0.5) == pytest.approx(-0.125)
    assert compute_update(-1.0, 4.0, 1.0) == pytest.approx(0.25)


@pytest.mark.parametrize(
    "gamma, dt, exc",
    [(0.0, 0.5, ValueError), (float("inf"), 0.5, ValueError), (1.0, 0.0, ScheduleError), (1.0, 1.5, ScheduleError)],
)
def test_compute_update_rejects_bad_inputs(gamma, dt, exc):
    with pytest.raises(exc):
        compute_update(0.1, gamma, dt)


def test_step_size_rule_validation():
    with pytest.raises(ValueError):
        StepSizeRule()
    with pytest.raises(ValueError):
        StepSizeRule(constant=(1.0,), callback=lambda *a: 1.0)
    with pytest.raises(ValueError):
        StepSizeRule.constant_per_coord([1.0], alpha=1.5)
    with pytest.raises(ValueError):
        StepSizeRule.constant_per_coord([1.0, -2.0])
    bad = StepSizeRule.from_callback(lambda j, t, view, g: 0.0)
    with pytest.raises(ValueError):
        bad.gamma(0, 0.5, np.zeros(1), 0.1)


def test_step_size_rule_describe():
    assert StepSizeRule.constant_per_coord([1, 2]).describe() == {"rule": "constant", "alpha": 2.0, "gammas": [1.0, 2.0]}
    assert StepSizeRule.from_callback(lambda *a: 1.0, name="market").describe() == {"rule": "market", "alpha": 2.0}


def test_run_config_checks_gamma_count(identity_obj):
    with pytest.raises(ValueError):
        RunConfig(objective=identity_obj, p0=np.zeros(2), horizon=5.0, step_rule=StepSizeRule.constant_per_coord([1.0]))


# ---------- Runs ----------
def _identity_config(obj, **kw):
    gammas = [spd_gamma_bound(obj.A, j) for j in range(2)]
    return RunConfig(objective=obj, p0=np.zeros(2), horizon=30.0, step_rule=StepSizeRule.constant_per_coord(gammas), **kw)


def test_run_on_identity_system_reaches_rhs(identity_obj):
    trace = run(_identity_config(identity_obj))
    assert trace.finished
    assert len(trace) == 60
    np.testing.assert_allclose(trace.final_point(), [1.0, 2.0], atol=1e-10)
    assert validate_trace(trace).ok
    assert trace.schedule["policy"] == "round_robin"
    assert trace.problem["step_rule"]["gammas"] == pytest.approx([1.001, 1.001])


@pytest.mark.parametrize("staleness", list(StalenessKind))
def test_every_staleness_policy_yields_valid_traces(coupled_obj, staleness):
    A = coupled_obj.A
    config = RunConfig(
        objective=coupled_obj,
        p0=np.array([1.0, -1.0]),
        horizon=40.0,
        step_rule=StepSizeRule.constant_per_coord([spd_gamma_bound(A, j) for j in range(2)]),
        schedule=SchedulePolicy.RANDOM_GAP,
        schedule_seed=3,
        staleness=StalenessPolicy(staleness, 3),
    )
    trace = run(config)
    assert validate_trace(trace).ok
    assert trace.staleness == {"policy": staleness.value, "seed": 3}
    # phi at the end is below phi at the start
    assert trace.events[-1].phi_after < trace.phi0


def test_runs_are_deterministic(coupled_obj):
    def once():
        return run(
            RunConfig(
                objective=coupled_obj,
                p0=np.array([1.0, -1.0]),
                horizon=15.0,
                step_rule=StepSizeRule.constant_per_coord([6.0, 6.0]),
                schedule="random_gap",
                schedule_seed=11,
                staleness=StalenessPolicy("random_in_box", 11),
            )
        )

    a, b = once(), once()
    assert [(ev.time, ev.coord, ev.value_after) for ev in a.events] == [(ev.time, ev.coord, ev.value_after) for ev in b.events]
    assert all(np.array_equal(x.view, y.view) for x, y in zip(a.events, b.events))


def test_leaving_the_domain_aborts_with_partial_trace(symmetric_ces):
    config = RunConfig(
        objective=MarketObjective(symmetric_ces),
        p0=np.array([5.0, 5.0]),
        horizon=3.0,
        step_rule=StepSizeRule.constant_per_coord([0.01, 0.01]),
    )
    with pytest.raises(RunAborted) as info:
        run(config)
    err = info.value
    assert err.event_index == 0
    assert str(err).startswith("event 0:")
    assert err.trace is not None and not err.trace.finished and len(err.trace) == 0


def test_event_cap_comes_from_settings(monkeypatch, identity_obj):
    monkeypatch.setenv("AGDLAB_MAX_EVENTS", "50")
    reset_settings()
    assert get_settings().max_events == 50
    with pytest.raises(ScheduleError):
        run(_identity_config(identity_obj))
    # an explicit cap wins over the environment
    trace = run(_identity_config(identity_obj, max_events=100))
    assert len(trace) == 60


def test_bad_log_level_is_refused(monkeypatch):
    monkeypatch.setenv("AGDLAB_LOG", "chatty")
    reset_settings()
    with pytest.raises(RuntimeError):
        get_settings()


# ---------- Synchronous baseline ----------
def test_synchronous_baseline_converges():
    obj = SpdObjective(SpdProblem(A=np.array([[2.0, 1.0], [1.0, 2.0]]), b=np.zeros(2)))
    gamma = spd_gamma_bound(obj.A, 0)
    assert gamma == pytest.approx(5.005)
    trace = run_synchronous_baseline(obj, np.array([1.0, -0.4]), gamma, 200)
    assert len(trace) == 400
    assert np.max(np.abs(trace.final_point())) < 1e-6
    assert validate_trace(trace).ok
    assert trace.schedule["baseline"] is True


def test_synchronous_baseline_rounds_have_unit_length(identity_obj):
    trace = run_synchronous_baseline(identity_obj, np.zeros(2), 1.0, 1, seed=3)
    np.testing.assert_array_equal(trace.final_point(), [1.0, 2.0])
    assert trace.schedule["round_length"] == 1.0
    assert all(ev.delta_t < 1.0 for ev in trace.events)
    assert validate_trace(trace).ok


def test_synchronous_baseline_reads_round_start_point(coupled_obj):
    trace = run_synchronous_baseline(coupled_obj, np.array([1.0, -1.0]), [6.0, 6.0], 5, seed=2)
    events = trace.events
    for r in range(5):
        first, second = events[2 * r], events[2 * r + 1]
        np.testing.assert_array_equal(first.view, second.view)
        np.testing.assert_array_equal(first.view, trace.points_before[2 * r])


def test_synchronous_baseline_edge_cases(coupled_obj):
    empty = run_synchronous_baseline(coupled_obj, np.zeros(2), 6.0, 0)
    assert len(empty) == 0 and empty.horizon == 0.0
    with pytest.raises(ValueError):
        run_synchronous_baseline(coupled_obj, np.zeros(2), 6.0, -1)
