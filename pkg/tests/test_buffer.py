import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddr3si.buffer import (
    DEFAULT_CORNERS,
    BufferLibraryError,
    BufferModel,
    DriverCorner,
    OdtModel,
    PvtCorner,
    ViCurve,
    driver_current,
    eval_vi,
    library_from_dict,
    odt_current,
    switching_weights,
)
from ddr3si.templates import buffer_library

TYP = DEFAULT_CORNERS["typical"]


def _linear_model(r, vddq=1.5):
    c = ViCurve.linear(r)
    dc = DriverCorner(c, c, 0.5e-9, 0.5e-9, 0.0)
    return BufferModel("LIN", vddq, {t: dc for t in ("slow", "typical", "fast")})


def test_eval_vi_midpoint_and_clamp():
    c = ViCurve(((0.0, 0.0), (1.5, 0.03)))
    assert eval_vi(c, 0.75) == pytest.approx(0.015, abs=1e-15)
    assert eval_vi(c, -1.0) == 0.0
    assert eval_vi(c, 9.0) == 0.03


def test_linear_40_ohm_pulldown():
    assert eval_vi(ViCurve.linear(40.0), 1.0) == pytest.approx(0.025, rel=1e-12)


def test_curve_requires_increasing_voltages():
    with pytest.raises(BufferLibraryError):
        ViCurve(((0.0, 0.0), (0.0, 1.0)))


@given(st.lists(st.floats(-2, 4), min_size=2, max_size=40))
def test_eval_vi_monotone_for_monotone_curve(vs):
    c = ViCurve(((-1.0, -0.05), (0.0, 0.0), (0.7, 0.02), (1.5, 0.03), (3.0, 0.035)))
    xs = np.sort(np.array(vs))
    ys = eval_vi(c, xs)
    assert np.all(np.diff(ys) >= 0)


def test_driver_current_examples():
    m = _linear_model(34.0)
    assert driver_current(m, TYP, 1.0, 0.0, 1.5) == pytest.approx(0.0, abs=1e-15)
    assert driver_current(m, TYP, 0.0, 1.0, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert driver_current(m, TYP, 1.0, 0.0, 0.75) == pytest.approx(0.75 / 34, rel=1e-12)


def test_full_pullup_ignores_pulldown():
    m = _linear_model(34.0)
    for v in (0.1, 0.6, 1.2):
        assert driver_current(m, TYP, 1.0, 0.0, v) == pytest.approx(eval_vi(m.corner("typical").pullup, 1.5 - v))


def test_switching_weights():
    assert switching_weights(0.25e-9, 0.5e-9, "rise") == (0.5, 0.5)
    assert switching_weights(0.9e-9, 0.5e-9, "rise") == (1.0, 0.0)
    assert switching_weights(0.0, 0.5e-9, "fall") == (1.0, 0.0)


def test_odt_current_examples():
    assert odt_current(OdtModel("O", 60.0, 0.0), TYP, 0.75) == pytest.approx(0.0, abs=1e-15)
    assert odt_current(OdtModel("ODT_80", 80.0, 0.0), TYP, 1.5) == pytest.approx(9.375e-3, rel=1e-12)
    assert odt_current(OdtModel("RCVR_240", 240.0, 0.0), TYP, 0.0) == pytest.approx(-3.125e-3, rel=1e-12)


@pytest.mark.parametrize("rtt", [40.0, 60.0, 80.0, 120.0, 240.0])
def test_split_legs_match_rtt(rtt):
    m = OdtModel("O", rtt, 0.0)
    legs = m.legs(TYP)
    par = 1 / sum(1 / r for r, _ in legs)
    assert par == pytest.approx(rtt, rel=1e-3)
    # Secant resistance about vddq/2.
    h = 1e-3
    r = 2 * h / (odt_current(m, TYP, 0.75 + h) - odt_current(m, TYP, 0.75 - h))
    assert r == pytest.approx(rtt, rel=1e-3)


def test_typical_scales_exact():
    with pytest.raises(BufferLibraryError):
        PvtCorner("typical", strength_scale=1.01)


def test_fast_never_weaker_than_slow():
    lib = library_from_dict(buffer_library())
    m = lib.driver("DRVR")
    s, f = lib.pvt_corners["slow"], lib.pvt_corners["fast"]
    for v in np.linspace(0, 1.5, 31):
        for w in (0.0, 1.0):
            assert abs(driver_current(m, f, w, 1 - w, v)) >= abs(driver_current(m, s, w, 1 - w, v)) - 1e-15


def test_library_round_trip():
    lib = library_from_dict(buffer_library())
    again = library_from_dict(lib.to_dict())
    assert again.to_dict() == lib.to_dict()
    assert again.termination("RCVR").terminated is False


def test_unknown_model_name():
    lib = library_from_dict(buffer_library())
    with pytest.raises(BufferLibraryError, match="NOPE"):
        lib.driver("NOPE")


def test_pulldown_must_sink_current():
    bad = ViCurve(((0.0, 0.0), (1.0, -0.01)))
    good = ViCurve.linear(40.0)
    with pytest.raises(BufferLibraryError, match="pulldown"):
        BufferModel("X", 1.5, {t: DriverCorner(good, bad, 1e-10, 1e-10, 0.0)
                               for t in ("slow", "typical", "fast")})


@settings(max_examples=50)
@given(st.floats(0.0, 1.5))
def test_curves_continuous(v):
    c = ViCurve(((0.0, 0.0), (0.5, 0.01), (1.0, 0.015), (1.5, 0.02)))
    eps = 1e-9
    assert math.isclose(eval_vi(c, v + eps), eval_vi(c, v), abs_tol=1e-9)
