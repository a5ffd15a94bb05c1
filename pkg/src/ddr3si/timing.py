"""Waveform measurements: threshold crossings, slew rates, setup/hold
times, derated margins and noise metrics.

Times are in seconds and voltages in volts; slew rates are reported in
V/ns, the unit of the derating table axes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .derating import DeratingTable, derate_lookup
from .netlist import BaseTiming, Thresholds
from .waveforms import Trace

NS = 1e-9


class MeasurementError(ValueError):
    pass


class EdgeAbsentError(MeasurementError):
    """The requested edge does not occur in the trace."""


class AcLevelError(MeasurementError):
    """The signal never reaches the AC input level on this edge."""


def _tv(trace, dt=None, t0=0.0):
    if isinstance(trace, Trace):
        return np.asarray(trace.v, dtype=float), trace.dt, trace.t0
    v = np.asarray(trace, dtype=float)
    if dt is None:
        raise ValueError("dt is required for a bare sample array")
    return v, dt, t0


def crossings(trace, level: float, direction: str = "both", dt: float | None = None,
              t0: float = 0.0) -> np.ndarray:
    """Interpolated times where ``trace`` passes ``level``.

    A rising crossing goes from strictly below to at-or-above the level; a
    falling one from strictly above to at-or-below. Crossings closer than
    dt/2 are merged.
    """
    v, dt, t0 = _tv(trace, dt, t0)
    if len(v) < 2:
        return np.zeros(0)
    a, b = v[:-1], v[1:]
    out = []
    if direction in ("rising", "both"):
        k = np.nonzero((a < level) & (b >= level))[0]
        out.append(k + (level - a[k]) / (b[k] - a[k]))
    if direction in ("falling", "both"):
        k = np.nonzero((a > level) & (b <= level))[0]
        out.append(k + (a[k] - level) / (a[k] - b[k]))
    if direction not in ("rising", "falling", "both"):
        raise ValueError(f"bad direction {direction!r}")
    t = np.sort(np.concatenate(out)) * dt + t0
    if len(t) > 1:
        keep = np.concatenate([[True], np.diff(t) > dt / 2])
        t = t[keep]
    return t


# --------------------------------------------------------------------------
# slew rates


@dataclass(frozen=True)
class SlewResult:
    value: float  # V/ns
    method: str
    edge: str
    window: tuple[float, float]


def _max_slope(v, dt, t0, t_a, t_b, sign):
    """Largest sample-to-sample slope (in the edge direction) over segments
    overlapping [t_a, t_b]."""
    k0 = max(int(math.floor((t_a - t0) / dt)), 0)
    k1 = min(int(math.ceil((t_b - t0) / dt)), len(v) - 1)
    if k1 <= k0:
        k1 = min(k0 + 1, len(v) - 1)
    s = sign * np.diff(v[k0:k1 + 1]) / dt
    return float(s.max()) if len(s) else 0.0


def _slew(v, dt, t0, lo, hi, edge, method, near=None, anchor="far"):
    """Slew between levels lo < hi on one rising or falling edge.

    The edge used is the one whose ``anchor`` crossing (``"far"`` or
    ``"start"`` level) is closest to ``near``; the first edge when ``near``
    is None.
    """
    if edge == "rising":
        far = crossings(v, hi, "rising", dt, t0)
        start_lvl, start_dir = lo, "rising"
    elif edge == "falling":
        far = crossings(v, lo, "falling", dt, t0)
        start_lvl, start_dir = hi, "falling"
    else:
        raise ValueError(f"bad edge {edge!r}")
    starts = crossings(v, start_lvl, start_dir, dt, t0)
    if len(starts) == 0:
        raise EdgeAbsentError(f"no {edge} edge through {start_lvl:.4g} V")
    if len(far) == 0:
        raise AcLevelError(f"{edge} edge never reaches {hi if edge == 'rising' else lo:.4g} V")
    if near is not None and anchor == "start":
        t_start = starts[np.argmin(np.abs(starts - near))]
        later = far[far >= t_start]
        if len(later) == 0:
            raise AcLevelError(f"{edge} edge never reaches the far level")
        t_end = later[0]
    elif near is None:
        t_start = starts[0]
        later = far[far >= t_start]
        if len(later) == 0:
            raise AcLevelError(f"{edge} edge never reaches the far level")
        t_end = later[0]
    else:
        t_end = far[np.argmin(np.abs(far - near))]
        earlier = starts[starts <= t_end]
        if len(earlier) == 0:
            raise EdgeAbsentError(f"no {edge} edge start before {t_end:.4e} s")
        t_start = earlier[-1]
    if method == "nominal":
        dur = t_end - t_start
        value = (hi - lo) / dur * NS if dur > 0 else math.inf
    elif method == "tangent":
        sign = 1.0 if edge == "rising" else -1.0
        value = _max_slope(v, dt, t0, t_start, t_end, sign) * NS
    else:
        raise ValueError(f"bad slew method {method!r}")
    return SlewResult(value, method, edge, (float(t_start), float(t_end)))


def diff_slew(trace_p, trace_n, edge: str, level: float = 0.175, method: str = "nominal",
              near: float | None = None, dt: float | None = None, t0: float = 0.0) -> SlewResult:
    """Differential slew of ``p - n`` between -level and +level."""
    vp, dt, t0 = _tv(trace_p, dt, t0)
    vn, _, _ = _tv(trace_n, dt, t0)
    if vp.shape != vn.shape:
        raise ValueError("strobe traces must be aligned")
    vd = vp - vn
    if vd.max() - vd.min() < 1e-12:
        raise EdgeAbsentError("edge absent: differential signal is static")
    return _slew(vd, dt, t0, -level, level, edge, method, near)


SLEW_LEVELS = {
    ("setup", "rising"): ("vref", "vih_ac"),
    ("setup", "falling"): ("vil_ac", "vref"),
    ("hold", "rising"): ("vil_dc", "vref"),
    ("hold", "falling"): ("vref", "vih_dc"),
}


def data_slew(trace, thr: Thresholds, kind: str, edge: str, method: str = "nominal",
              near: float | None = None, dt: float | None = None, t0: float = 0.0) -> SlewResult:
    """Single-ended data slew for setup or hold on a rising/falling edge."""
    v, dt, t0 = _tv(trace, dt, t0)
    lo_name, hi_name = SLEW_LEVELS[(kind, edge)]
    lo, hi = getattr(thr, lo_name), getattr(thr, hi_name)
    if kind == "setup":
        if edge == "rising" and v.max() < thr.vih_ac:
            raise AcLevelError(f"signal peaks at {v.max():.4g} V, below vih_ac {thr.vih_ac:.4g} V")
        if edge == "falling" and v.min() > thr.vil_ac:
            raise AcLevelError(f"signal bottoms at {v.min():.4g} V, above vil_ac {thr.vil_ac:.4g} V")
    return _slew(v, dt, t0, lo, hi, edge, method, near, "far" if kind == "setup" else "start")


# --------------------------------------------------------------------------
# setup / hold


def _value_at(v, dt, t0, t):
    x = (t - t0) / dt
    k = min(max(int(math.floor(x)), 0), len(v) - 2)
    f = x - k
    return float(v[k] + (v[k + 1] - v[k]) * f)


def setup_time(trace, strobe_time: float, thr: Thresholds, window: float | None = None,
               dt: float | None = None, t0: float = 0.0) -> tuple[float, str, float]:
    """(t_DS, data edge, time of the AC crossing) for the bit sampled at
    ``strobe_time``.

    A high bit is valid once the data last rose through vih_ac before the
    strobe; a low bit once it last fell through vil_ac. If the data is not
    valid yet at the strobe, t_DS is negative.
    """
    v, dt, t0 = _tv(trace, dt, t0)
    high = _value_at(v, dt, t0, strobe_time) >= thr.vref
    level, direction = (thr.vih_ac, "rising") if high else (thr.vil_ac, "falling")
    xs = crossings(v, level, direction, dt, t0)
    lo = -math.inf if window is None else strobe_time - window
    hi = math.inf if window is None else strobe_time + window
    now = _value_at(v, dt, t0, strobe_time)
    valid = now >= level if high else now <= level
    eps = 1e-6 * dt  # interpolation rounding when a crossing sits on the strobe
    if valid:
        before = xs[(xs <= strobe_time + eps) & (xs >= lo)]
        if len(before) == 0:
            raise MeasurementError("no qualifying data transition before the strobe")
        tc = float(before[-1])
    else:
        after = xs[(xs > strobe_time - eps) & (xs <= hi)]
        if len(after) == 0:
            raise AcLevelError("data never reaches the AC level around the strobe")
        tc = float(after[0])
    return strobe_time - tc, direction, tc


def hold_time(trace, strobe_time: float, thr: Thresholds, window: float | None = None,
              dt: float | None = None, t0: float = 0.0) -> tuple[float, str, float]:
    """(t_DH, data edge, time of the DC crossing): the bit sampled at the
    strobe stays valid until the data next leaves the DC level."""
    v, dt, t0 = _tv(trace, dt, t0)
    now = _value_at(v, dt, t0, strobe_time)
    high = now >= thr.vref
    level, direction = (thr.vih_dc, "falling") if high else (thr.vil_dc, "rising")
    xs = crossings(v, level, direction, dt, t0)
    lo = -math.inf if window is None else strobe_time - window
    hi = math.inf if window is None else strobe_time + window
    valid = now >= level if high else now <= level
    eps = 1e-6 * dt
    if valid:
        after = xs[(xs > strobe_time - eps) & (xs <= hi)]
        if len(after) == 0:
            raise MeasurementError("no qualifying data transition after the strobe")
        tc = float(after[0])
    else:
        before = xs[(xs <= strobe_time + eps) & (xs >= lo)]
        if len(before) == 0:
            raise MeasurementError("data left the DC level before the window")
        tc = float(before[-1])
    return tc - strobe_time, direction, tc


def measure_setup_hold(trace, strobe_time: float, thr: Thresholds, latch_edge: str = "both",
                       window: float | None = None, dt: float | None = None,
                       t0: float = 0.0) -> tuple[float, float]:
    """(t_DS, t_DH) of the data bit latched at ``strobe_time``."""
    if latch_edge not in ("rising", "falling", "both"):
        raise ValueError(f"bad latch edge {latch_edge!r}")
    ds = setup_time(trace, strobe_time, thr, window, dt, t0)[0]
    dh = hold_time(trace, strobe_time, thr, window, dt, t0)[0]
    return ds, dh


# --------------------------------------------------------------------------
# margins


@dataclass(frozen=True)
class TimingResult:
    strobe_time: float
    strobe_edge: str
    t_ds: float
    t_dh: float
    dq_setup_slew: SlewResult | None
    dq_hold_slew: SlewResult | None
    dqs_slew: SlewResult | None
    delta_ds: float
    delta_dh: float
    setup_margin: float
    hold_margin: float
    passed: bool
    note: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("dq_setup_slew", "dq_hold_slew", "dqs_slew"):
            if d[k] is not None:
                d[k]["window"] = list(d[k]["window"])
        return d


def derated_margins(t_ds: float, t_dh: float, delta: tuple[float, float], base: BaseTiming | tuple,
                    bus_class: str = "data") -> tuple[float, float, bool]:
    """(setup margin, hold margin, pass): raw time plus derating minus base."""
    if isinstance(base, BaseTiming):
        base_ds, base_dh = base.setup[bus_class], base.hold[bus_class]
    else:
        base_ds, base_dh = base
    ms = t_ds + delta[0] - base_ds
    mh = t_dh + delta[1] - base_dh
    return ms, mh, bool(ms >= 0 and mh >= 0)


def derate_edge(table: DeratingTable | None, setup_slew: float, hold_slew: float, dqs_slew: float,
                mode: str = "bilinear") -> tuple[float, float]:
    """Setup derating from the setup slew, hold derating from the hold slew."""
    if table is None:
        return 0.0, 0.0
    ds = derate_lookup(table, setup_slew, dqs_slew, mode)[0]
    dh = derate_lookup(table, hold_slew, dqs_slew, mode)[1]
    return ds, dh


# --------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseMetrics:
    overshoot: float
    undershoot: float
    ac_noise_margin_high: float | None
    ac_noise_margin_low: float | None
    dc_noise_margin_high: float | None
    dc_noise_margin_low: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def settled_samples(v: np.ndarray, dt: float, t0: float, ui: float | None, offset: float = 0.0,
                    t_min: float = 0.0) -> np.ndarray:
    """Samples at bit centres (when ``ui`` is known) or on flat stretches."""
    if ui is not None:
        t_end = t0 + (len(v) - 1) * dt
        k0 = math.ceil((max(t_min, t0) - offset) / ui - 0.5)
        centres = offset + (np.arange(k0, k0 + int((t_end - offset) / ui) + 1) + 0.5) * ui
        centres = centres[(centres >= max(t_min, t0)) & (centres <= t_end)]
        return np.interp(centres, t0 + np.arange(len(v)) * dt, v)
    if len(v) < 3:
        return v
    span = float(v.max() - v.min())
    d = np.abs(np.diff(v))
    flat = np.concatenate([[True], d <= 0.002 * span + 1e-12])
    return v[flat]


def noise_metrics(trace, thr: Thresholds, ui: float | None = None, offset: float = 0.0,
                  t_min: float = 0.0, dt: float | None = None, t0: float = 0.0) -> NoiseMetrics:
    v, dt, t0 = _tv(trace, dt, t0)
    k_min = max(int((t_min - t0) / dt), 0)
    view = v[k_min:]
    over = max(float(view.max()) - thr.vddq, 0.0)
    under = max(-float(view.min()), 0.0)
    s = settled_samples(v, dt, t0, ui, offset, t_min) if ui else settled_samples(view, dt, t0, None)
    highs, lows = s[s >= thr.vref], s[s < thr.vref]
    hi_min = float(highs.min()) if len(highs) else None
    lo_max = float(lows.max()) if len(lows) else None
    return NoiseMetrics(
        overshoot=over,
        undershoot=under,
        ac_noise_margin_high=None if hi_min is None else hi_min - thr.vih_ac,
        ac_noise_margin_low=None if lo_max is None else thr.vil_ac - lo_max,
        dc_noise_margin_high=None if hi_min is None else hi_min - thr.vih_dc,
        dc_noise_margin_low=None if lo_max is None else thr.vil_dc - lo_max,
    )
