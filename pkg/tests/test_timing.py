import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import lattice_far

from ddr3si.buffer import DEFAULT_CORNERS, BufferModel, DriverCorner, ViCurve
from ddr3si.circuit import Circuit
from ddr3si.derating import (
    NotSupportedError,
    SlewOutOfRangeError,
    ddr3_data_table,
    derate_lookup,
    parse_table,
)
from ddr3si.netlist import BaseTiming, Thresholds
from ddr3si.simulate import simulate
from ddr3si.stimulus import Stimulus
from ddr3si.timing import (
    AcLevelError,
    EdgeAbsentError,
    MeasurementError,
    crossings,
    data_slew,
    derate_edge,
    derated_margins,
    diff_slew,
    hold_time,
    measure_setup_hold,
    noise_metrics,
    setup_time,
)
from ddr3si.waveforms import Trace

NS, PS = 1e-9, 1e-12
THR = Thresholds(0.75, 0.925, 0.85, 0.575, 0.65)
DT = 1 * PS


def _pwl_trace(points, t_end, dt=DT, t0=0.0):
    t = t0 + np.arange(int(round((t_end - t0) / dt)) + 1) * dt
    tp = [p[0] for p in points]
    vp = [p[1] for p in points]
    return Trace(np.interp(t, tp, vp), dt, t0)


# Data-strobe derating cells in ps, DQ rows by DQS columns; None marks an unsupported cell.
DQS_AXIS = (4.0, 3.0, 2.0, 1.8, 1.6, 1.4, 1.2, 1.0)
GOLDEN = {
    2.0: [(88, 50), (88, 50), (88, 50), None, None, None, None, None],
    1.5: [(59, 34), (59, 34), (59, 34), (67, 42), None, None, None, None],
    1.0: [(0, 0), (0, 0), (0, 0), (8, 8), (16, 16), None, None, None],
    0.9: [None, (-2, -4), (-2, -4), (6, 4), (14, 12), (22, 20), None, None],
    0.8: [None, None, (-6, -10), (2, -2), (10, 6), (18, 14), (26, 24), None],
    0.7: [None, None, None, (-3, -8), (5, 0), (13, 8), (21, 18), (29, 34)],
    0.6: [None, None, None, None, (-1, -10), (7, -2), (15, 8), (23, 24)],
    0.5: [None, None, None, None, None, (-11, -16), (-2, -6), (5, 10)],
    0.4: [None, None, None, None, None, None, (-30, -26), (-22, -10)],
}


# --------------------------------------------------------------------------
# crossings


def test_crossing_of_linear_ramp():
    tr = _pwl_trace([(0, 0), (1 * NS, 1.5)], 2 * NS)
    xs = crossings(tr, 0.75, "rising")
    assert len(xs) == 1 and xs[0] == pytest.approx(0.5 * NS, abs=1e-18)


def test_constant_trace_has_no_crossings():
    assert len(crossings(np.full(100, 0.75), 0.75, "both", dt=DT)) == 0


def test_square_wave_crossings():
    dt = 5 * PS
    k = np.arange(2000)
    v = np.where((k - 50) % 200 < 100, 1.5, 0.0)
    xs = crossings(v, 0.75, "rising", dt=dt)
    assert len(xs) == 10
    assert np.allclose(np.diff(xs), 1 * NS, atol=1e-15)


# --------------------------------------------------------------------------
# slews


def test_complementary_edges_differential_slew():
    p = _pwl_trace([(0, 0.0), (1 * NS, 1.0), (3 * NS, 1.0)], 3 * NS)
    n = _pwl_trace([(0, 1.0), (1 * NS, 0.0), (3 * NS, 0.0)], 3 * NS)
    s = diff_slew(p, n, "rising", level=0.175)
    assert s.value == pytest.approx(2.0, rel=1e-9)
    assert s.method == "nominal"


def test_static_pair_edge_absent():
    p = Trace(np.full(50, 1.0), DT)
    n = Trace(np.full(50, 0.5), DT)
    with pytest.raises(EdgeAbsentError, match="edge absent"):
        diff_slew(p, n, "rising")


@pytest.mark.parametrize("k", [0.5, 1.0, 2.7])
def test_linear_edge_all_variants(k):
    rise = _pwl_trace([(0, 0.0), (1.5 / k * NS, 1.5), (5 * NS, 1.5)], 5 * NS)
    fall = _pwl_trace([(0, 1.5), (1.5 / k * NS, 0.0), (5 * NS, 0.0)], 5 * NS)
    for kind in ("setup", "hold"):
        for edge, tr in (("rising", rise), ("falling", fall)):
            nom = data_slew(tr, THR, kind, edge, "nominal").value
            tan = data_slew(tr, THR, kind, edge, "tangent").value
            assert nom == pytest.approx(k, rel=1e-9)
            assert tan == pytest.approx(nom, rel=1e-3)


def test_two_slope_edge_tangent_exceeds_nominal():
    # 3 V/ns up to 0.8 V, then 0.5 V/ns through vih_ac.
    t1 = 0.8 / 3 * NS
    tr = _pwl_trace([(0, 0.0), (t1, 0.8), (t1 + 0.7 / 0.5 * NS, 1.5), (4 * NS, 1.5)], 4 * NS)
    nom = data_slew(tr, THR, "setup", "rising", "nominal").value
    tan = data_slew(tr, THR, "setup", "rising", "tangent").value
    t_vref = 0.75 / 3
    t_ac = t1 / NS + (0.925 - 0.8) / 0.5
    assert nom == pytest.approx(0.175 / (t_ac - t_vref), rel=1e-6)
    assert tan == pytest.approx(3.0, rel=1e-6)
    assert tan > nom


def test_edge_below_ac_level():
    tr = _pwl_trace([(0, 0.0), (1 * NS, 0.9), (3 * NS, 0.9)], 3 * NS)
    with pytest.raises(AcLevelError):
        data_slew(tr, THR, "setup", "rising")


# --------------------------------------------------------------------------
# setup / hold


def _pulse(t_ac, t_dc, k=2.0):
    """High pulse crossing vih_ac rising at ``t_ac`` and vih_dc falling at
    ``t_dc`` with k V/ns edges."""
    a0 = t_ac - 0.925 / k * NS
    b0 = t_dc - (1.5 - 0.85) / k * NS
    return _pwl_trace([(0, 0.0), (a0, 0.0), (a0 + 1.5 / k * NS, 1.5), (b0, 1.5),
                       (b0 + 1.5 / k * NS, 0.0), (6 * NS, 0.0)], 6 * NS)


def test_setup_hold_definition():
    ts = 3 * NS
    ds, dh = measure_setup_hold(_pulse(ts - 300 * PS, ts + 400 * PS), ts, THR)
    assert ds == pytest.approx(300 * PS, abs=1e-16)
    assert dh == pytest.approx(400 * PS, abs=1e-16)


def test_transition_at_strobe_gives_zero_setup():
    ts = 3 * NS
    ds, _, _ = setup_time(_pulse(ts, ts + 1 * NS), ts, THR)
    assert ds == pytest.approx(0.0, abs=1e-16)


def test_late_data_negative_setup():
    ts = 3 * NS
    ds, _, _ = setup_time(_pulse(ts + 50 * PS, ts + 1 * NS), ts, THR)
    assert ds == pytest.approx(-50 * PS, abs=1e-16)


def test_low_bit_uses_vil_levels():
    ts = 3 * NS
    # Mirror image of a high pulse around vref.
    hi = _pulse(ts - 200 * PS, ts + 300 * PS)
    lo = Trace(1.5 - hi.v, hi.dt)
    ds, dh = measure_setup_hold(lo, ts, THR)
    assert ds == pytest.approx(200 * PS, abs=1e-16)
    assert dh == pytest.approx(300 * PS, abs=1e-16)


def test_no_transition_raises():
    with pytest.raises(MeasurementError):
        hold_time(Trace(np.full(1000, 1.5), DT), 0.5 * NS, THR)


@settings(max_examples=30, deadline=None)
@given(st.integers(-400, 400))
def test_time_shift_equivariance(shift_ps):
    ts = 3 * NS
    base = _pulse(ts - 250 * PS, ts + 350 * PS)
    moved = base.shifted(shift_ps * PS)
    a = measure_setup_hold(base, ts, THR)
    b = measure_setup_hold(moved, ts + shift_ps * PS, THR)
    assert b == pytest.approx(a, abs=1e-16)


def test_matched_lane_geometry_oracle():
    """Linear driver, matched line: every edge is a clean linear ramp, so
    setup and hold follow from where the ramp crosses the levels."""
    ui, ramp, td = 1.25 * NS, 0.3 * NS, 0.5 * NS
    dt = ui / 64
    curve = ViCurve.linear(50.0)
    dc = DriverCorner(curve, curve, ramp, ramp, 0.0)
    m = BufferModel("LIN", 1.5, {t: dc for t in ("slow", "typical", "fast")})
    c = Circuit()
    stim = Stimulus("prbs", ui, 0.0, seed=21, n_bits=40)
    c.add_driver("pad", m, DEFAULT_CORNERS["typical"], stim)
    c.add_line("T", "pad", "rx", 50.0, td)
    c.add_resistor("rx", None, 50.0, 0.75)
    w = simulate(c, dt, 42 * ui)
    rx = w.trace("rx")
    lo, hi = 0.375, 1.125
    swing = hi - lo
    f_ac_r = (THR.vih_ac - lo) / swing
    f_dc_f = (hi - THR.vih_dc) / swing
    n = 0
    for k in range(6, 36):
        ts = td + (k + 0.5) * ui + ramp / 2
        try:
            ds, edge, _ = setup_time(rx, ts, THR, window=ui)
        except MeasurementError:
            continue
        if edge == "rising":
            assert ds == pytest.approx(ui / 2 + ramp / 2 - f_ac_r * ramp, abs=2 * dt)
            n += 1
        try:
            dh, edge, _ = hold_time(rx, ts, THR, window=ui)
        except MeasurementError:
            continue
        if edge == "falling":
            assert dh == pytest.approx(ui / 2 - ramp / 2 + f_dc_f * ramp, abs=2 * dt)
    assert n >= 3


# --------------------------------------------------------------------------
# derating


def test_golden_table_exact():
    tab = ddr3_data_table()
    for dq, row in GOLDEN.items():
        for dqs, cell in zip(DQS_AXIS, row):
            if cell is None:
                with pytest.raises(NotSupportedError):
                    derate_lookup(tab, dq, dqs)
            else:
                ds, dh = derate_lookup(tab, dq, dqs)
                assert (round(ds / PS, 9), round(dh / PS, 9)) == cell


def test_named_cells():
    tab = ddr3_data_table()
    assert derate_lookup(tab, 1.0, 2.0) == (0.0, 0.0)
    assert derate_lookup(tab, 2.0, 4.0) == pytest.approx((88 * PS, 50 * PS), abs=1e-18)
    assert derate_lookup(tab, 0.5, 1.0) == pytest.approx((5 * PS, 10 * PS), abs=1e-18)
    with pytest.raises(NotSupportedError):
        derate_lookup(tab, 2.0, 1.0)


@given(st.floats(2.0, 4.0))
def test_identity_row(dqs):
    assert derate_lookup(ddr3_data_table(), 1.0, dqs) == (0.0, 0.0)


def test_clamp_and_range():
    tab = ddr3_data_table()
    assert derate_lookup(tab, 5.0, 6.0) == derate_lookup(tab, 2.0, 4.0)
    with pytest.raises(SlewOutOfRangeError):
        derate_lookup(tab, 0.3, 1.0)


@settings(max_examples=60)
@given(st.floats(0.0, 1.0))
def test_bilinear_monotone_between_cells(f):
    tab = ddr3_data_table()
    # Along the DQ axis at DQS 1.6: cells 1.0 -> 0.9 give 16 -> 14 ps setup.
    dq = 1.0 - 0.1 * f
    ds, dh = derate_lookup(tab, dq, 1.6)
    assert 14 * PS - 1e-18 <= ds <= 16 * PS + 1e-18
    ds2, _ = derate_lookup(tab, 1.0 - 0.1 * min(f + 0.01, 1.0), 1.6)
    assert ds2 <= ds + 1e-18


def test_nearest_mode():
    tab = ddr3_data_table()
    assert derate_lookup(tab, 0.96, 1.6, mode="nearest") == pytest.approx((16 * PS, 16 * PS))
    assert derate_lookup(tab, 0.96, 1.6)[0] == pytest.approx(15.2 * PS)


def test_table_csv_round_trip():
    tab = ddr3_data_table()
    again = parse_table(tab.to_csv())
    assert again.cells == tab.cells
    assert again.dq_slew_axis == tab.dq_slew_axis and again.dqs_slew_axis == tab.dqs_slew_axis


def test_derate_edge_uses_each_side():
    tab = ddr3_data_table()
    ds, dh = derate_edge(tab, 1.5, 0.8, 2.0)
    assert ds == pytest.approx(59 * PS)
    assert dh == pytest.approx(-10 * PS)
    assert derate_edge(None, 0.1, 0.1, 0.1) == (0.0, 0.0)


# --------------------------------------------------------------------------
# margins


def test_margin_arithmetic():
    base = (125 * PS, 150 * PS)
    ms, mh, ok = derated_margins(200 * PS, 250 * PS, (0.0, 0.0), base)
    assert (ms, mh, ok) == (pytest.approx(75 * PS), pytest.approx(100 * PS), True)
    ms, mh, ok = derated_margins(100 * PS, 250 * PS, (-30 * PS, 0.0), base)
    assert ms == pytest.approx(-55 * PS) and not ok


def test_top_left_cell_shifts_margins():
    tb = BaseTiming(2.5 * NS, {"data": 75 * PS}, {"data": 150 * PS})
    d = derate_lookup(ddr3_data_table(), 2.0, 4.0)
    a = derated_margins(300 * PS, 300 * PS, (0.0, 0.0), tb)
    b = derated_margins(300 * PS, 300 * PS, d, tb)
    assert b[0] - a[0] == pytest.approx(88 * PS, abs=1e-20)
    assert b[1] - a[1] == pytest.approx(50 * PS, abs=1e-20)


# --------------------------------------------------------------------------
# noise


def test_noise_inside_rails():
    tr = _pulse(2 * NS, 3 * NS)
    nz = noise_metrics(tr, THR)
    assert nz.overshoot == 0 and nz.undershoot == 0


def test_open_line_overshoot():
    dt = 10 * PS
    c = Circuit()
    pts = [(0.0, 0.0), (dt, 1.5)]
    c.add_source("src", 25.0, pts)
    c.add_line("T", "src", "far", 50.0, 1 * NS)
    w = simulate(c, dt, 20 * NS)
    expect = lattice_far(pts, 25.0, 50.0, None, 1 * NS, w.times).max()
    assert expect == pytest.approx(2.0)
    nz = noise_metrics(w.trace("far"), THR)
    assert nz.overshoot == pytest.approx(0.5, abs=1e-9)


def test_settled_high_at_ac_level():
    v = np.concatenate([np.zeros(200), np.full(400, 0.925), np.zeros(200)])
    nz = noise_metrics(Trace(v, 10 * PS), THR, ui=2 * NS)
    assert nz.ac_noise_margin_high == pytest.approx(0.0, abs=1e-12)
    assert nz.dc_noise_margin_high == pytest.approx(0.075, abs=1e-12)
