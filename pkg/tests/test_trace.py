import json

import numpy as np
import pandas as pd
import pytest

from app.lib.trace import (
    BASE_COLUMNS,
    CoordHistory,
    Trace,
    TraceFormatError,
    events_from_rows,
    read_trace_csv,
    trace_frame,
    write_trace_csv,
)


def test_history_lookups():
    h = CoordHistory(np.array([1.0, 5.0]))
    h.append(0, 0.5, 2.0)
    h.append(0, 1.2, 3.0)
    assert h.value_at(0, 0.5) == 1.0  # value just before the update at 0.5
    assert h.value_at(0, 0.6) == 2.0
    assert h.value_at(0, 2.0) == 3.0
    assert h.span(0, 0.0, 1.0) == (1.0, 2.0)
    assert h.span(0, 0.7, 1.2) == (2.0, 3.0)
    assert h.span(1, 0.0, 3.0) == (5.0, 5.0)
    assert h.next_update(0, 0.5) == 1.2
    assert h.next_update(0, 1.2) is None
    assert h.previous_update(0, 1.2) == 0.5
    assert h.previous_update(1, 1.0) == 0.0
    np.testing.assert_array_equal(h.point_at(1.0), [2.0, 5.0])


def test_window_pins_updating_coordinate():
    h = CoordHistory(np.array([1.0, 5.0]))
    h.append(1, 0.3, 4.0)
    box = h.window(0, 0.0, 0.5, 1.0)
    np.testing.assert_array_equal(box.lo, [1.0, 4.0])
    np.testing.assert_array_equal(box.hi, [1.0, 5.0])
    with pytest.raises(ValueError):
        h.window(0, 0.6, 0.5, 1.0)


def test_points_replay(two_event_trace):
    np.testing.assert_allclose(two_event_trace.points_before, [[0.0, 0.0], [0.0, 0.1]])
    np.testing.assert_allclose(two_event_trace.final_point(), [-0.1, 0.1])
    assert [list(p) for p in two_event_trace.points()] == [[0.0, 0.1], [-0.1, 0.1]]
    assert [ev.seq for ev in two_event_trace.events_of(1)] == [0]
    assert two_event_trace.events[1].delta_t == 1.0


def test_phi_at_integer_times_uses_value_before_updates():
    rows = [
        {"time": 0.5, "coord": 0, "tau": 0.0, "view": [1.0], "g_tilde": 1.0, "gamma": 1.0, "delta_p": -0.5,
         "value_before": 1.0, "value_after": 0.5, "phi_after": 3.0},
        {"time": 2.0, "coord": 0, "tau": 0.5, "view": [0.5], "g_tilde": 0.1, "gamma": 1.0, "delta_p": -0.15,
         "value_before": 0.5, "value_after": 0.35, "phi_after": 1.0},
    ]
    trace = Trace(p0=np.array([1.0]), events=events_from_rows(rows, 1), horizon=3.0, phi0=5.0)
    # t=2 reads the value before the update at exactly 2
    np.testing.assert_allclose(trace.phi_at_integer_times(), [5.0, 3.0, 3.0, 1.0])
    times, phis = trace.phi_series()
    np.testing.assert_allclose(times, [0.0, 0.5, 2.0])
    np.testing.assert_allclose(phis, [5.0, 3.0, 1.0])


def test_csv_round_trip_keeps_every_field(tmp_path):
    rows = [
        {"time": 0.5, "coord": 1, "tau": 0.0, "view": [0.0, 0.0], "g_tilde": -0.2, "gamma": 1.0,
         "delta_p": 0.1, "value_before": 0.0, "value_after": 0.1, "extras": {"z_tilde": 0.2}},
        {"time": 1.0, "coord": 0, "tau": 0.0, "view": [0.0, 0.1], "g_tilde": 0.1, "g_fresh": 0.25, "gamma": 1.0,
         "delta_p": -0.1, "value_before": 0.0, "value_after": -0.1, "phi_after": 1 / 3},
    ]
    trace = Trace(
        p0=np.zeros(2),
        events=events_from_rows(rows, 2),
        horizon=1.0,
        phi0=0.0,
        seed=7,
        problem={"kind": "spd", "n": 2},
        schedule={"policy": "round_robin"},
        staleness={"policy": "fresh", "seed": 7},
    )
    path = write_trace_csv(trace, tmp_path / "run" / "trace.csv")
    assert (tmp_path / "run" / "trace.meta.json").exists()
    back = read_trace_csv(path)
    assert back.seed == 7 and back.problem == {"kind": "spd", "n": 2} and back.finished
    assert len(back) == 2
    for a, b in zip(trace.events, back.events):
        for name in BASE_COLUMNS:
            assert getattr(a, name) == getattr(b, name)
        np.testing.assert_array_equal(a.view, b.view)
    assert back.events[0].extras == {"z_tilde": 0.2}
    # events without an extra get NaN in its column
    assert np.isnan(back.events[1].extras["z_tilde"])


def test_frame_column_order(two_event_trace):
    df = trace_frame(two_event_trace)
    assert list(df.columns) == list(BASE_COLUMNS) + ["view_0", "view_1"]


def test_csv_output_is_byte_stable(tmp_path, two_event_trace):
    a = write_trace_csv(two_event_trace, tmp_path / "a.csv").read_bytes()
    b = write_trace_csv(two_event_trace, tmp_path / "b.csv").read_bytes()
    assert a == b


def test_missing_sidecar_or_columns(tmp_path, two_event_trace):
    path = write_trace_csv(two_event_trace, tmp_path / "t.csv")
    (tmp_path / "t.meta.json").unlink()
    with pytest.raises(TraceFormatError):
        read_trace_csv(path)

    path = write_trace_csv(two_event_trace, tmp_path / "u.csv")
    pd.read_csv(path).drop(columns=["gamma"]).to_csv(path, index=False)
    with pytest.raises(TraceFormatError):
        read_trace_csv(path)

    path = write_trace_csv(two_event_trace, tmp_path / "v.csv")
    meta = json.loads((tmp_path / "v.meta.json").read_text())
    meta["p0"] = [0.0, 0.0, 0.0]
    (tmp_path / "v.meta.json").write_text(json.dumps(meta))
    with pytest.raises(TraceFormatError):
        read_trace_csv(path)

    with pytest.raises(TraceFormatError):
        read_trace_csv(tmp_path / "nothing.csv")
