"""Eye diagrams folded modulo one UI."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netlist import Thresholds
from .timing import _tv, crossings


@dataclass
class EyeDiagram:
    """Folded eye with its geometric openings.

    ``width`` is the vref opening less the transition allowance of the
    bounding edges: each crossing is widened by the time a linear edge of
    the same slope needs to travel from vref to the settled level. For an
    ideal trapezoid this is UI minus the transition time. ``width_at_vref``
    is the plain gap between the bounding vref crossings.
    """

    ui: float
    offset: float
    density: np.ndarray  # [time bin, voltage bin]
    t_edges: np.ndarray
    v_edges: np.ndarray
    width: float
    width_at_vref: float
    height: float
    center: float  # fold phase of the eye centre, seconds
    closed: bool
    valid_window: tuple[float, float] | None = None  # fold phases
    valid_levels: tuple[float, float] | None = None
    crossing_phases: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def summary(self) -> dict:
        return {
            "ui_s": self.ui,
            "width_s": self.width,
            "width_at_vref_s": self.width_at_vref,
            "height_v": self.height,
            "center_s": self.center,
            "closed": self.closed,
            "valid_window_s": None if self.valid_window is None else [float(x) for x in self.valid_window],
        }

    def density_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["v_low", "v_high", *[f"{t:.6e}" for t in self.t_edges[:-1]]])
            for j in range(self.density.shape[1]):
                w.writerow([f"{self.v_edges[j]:.6e}", f"{self.v_edges[j + 1]:.6e}",
                            *[int(x) for x in self.density[:, j]]])


def eye_diagram(trace, ui: float, offset: float | None, thr: Thresholds,
                valid_window: tuple[float, float] | None = None, warmup_ui: int = 4,
                t_bins: int = 64, v_bins: int = 64, dt: float | None = None,
                t0: float = 0.0, swing: tuple[float, float] | None = None) -> EyeDiagram:
    """Fold ``trace`` modulo ``ui`` after discarding ``warmup_ui`` UIs.

    ``offset`` sets the fold origin; when None it is chosen so the eye
    centre sits in the middle of the folded window. ``valid_window`` is an
    absolute (start, end) time pair that is overlaid as fold phases.
    ``swing`` overrides the settled (low, high) levels.
    """
    v, dt, t0 = _tv(trace, dt, t0)
    k0 = int(math.ceil(warmup_ui * ui / dt))
    if len(v) - k0 < 8 * ui / dt - 1e-9:
        raise ValueError("eye needs at least 8 UI of samples after the warm-up")
    v = v[k0:]
    t0 = t0 + k0 * dt
    t = t0 + np.arange(len(v)) * dt

    xs = crossings(v, thr.vref, "both", dt, t0)
    closed = False
    if len(xs) == 0:
        phase_c = 0.0 if offset is None else offset % ui
        width = width_vref = 0.0
        closed = True
        ph = np.zeros(0)
    else:
        ph = np.mod(xs, ui)
        ang = ph / ui * 2 * math.pi
        phase_c = (math.atan2(np.sin(ang).mean(), np.cos(ang).mean()) / (2 * math.pi) * ui) % ui
    # Fold so crossings sit at the window edges and the eye in the middle.
    fold0 = phase_c if offset is None else offset
    centre_abs = phase_c + ui / 2

    lo_lvl, hi_lvl = swing if swing is not None else _settled_levels(v, t, ui, centre_abs, thr)
    if len(xs):
        psi = np.mod(xs - phase_c + ui / 2, ui) - ui / 2  # crossing phase about the cluster
        k = np.clip(((xs - t0) / dt).astype(int), 0, len(v) - 2)
        slope = np.abs(v[k + 1] - v[k]) / dt
        half = np.where(slope > 0, 0.5 * (hi_lvl - lo_lvl) / np.maximum(slope, 1e-30), np.inf)
        left, right = psi.max(), psi.min() + ui
        width_vref = max(right - left, 0.0)
        width = (psi.min() - half[np.argmin(psi)]) + ui - (psi.max() + half[np.argmax(psi)])
        width = max(width, 0.0)
        centre_abs = phase_c + 0.5 * (left + right)
        closed = width <= 0
    centre_phase = (centre_abs - fold0) % ui

    # Eye height at the centre: lowest "one" minus highest "zero".
    at_centre = np.interp(np.arange(math.ceil((t0 - centre_abs) / ui), (t[-1] - centre_abs) / ui) * ui
                          + centre_abs, t, v)
    ones, zeros = at_centre[at_centre >= thr.vref], at_centre[at_centre < thr.vref]
    if len(ones) and len(zeros):
        height = max(float(ones.min() - zeros.max()), 0.0)
    else:
        height = 0.0
        closed = True
    if height <= 0:
        closed = True
    if closed:
        width = 0.0 if len(xs) == 0 else width

    fold = np.mod(t - fold0, ui)
    v_lo = min(float(v.min()), -0.05 * thr.vddq)
    v_hi = max(float(v.max()), 1.05 * thr.vddq)
    dens, te, ve = np.histogram2d(fold, v, bins=[t_bins, v_bins], range=[[0, ui], [v_lo, v_hi]])
    vw = None
    if valid_window is not None:
        vw = ((valid_window[0] - fold0) % ui, (valid_window[1] - fold0) % ui)
    return EyeDiagram(
        ui=ui, offset=fold0, density=dens.astype(np.int64), t_edges=te, v_edges=ve,
        width=float(width), width_at_vref=float(width_vref), height=float(height),
        center=float(centre_phase), closed=bool(closed), valid_window=vw,
        valid_levels=(thr.vil_ac, thr.vih_ac), crossing_phases=np.mod(xs - fold0, ui),
    )


def _settled_levels(v, t, ui, centre_abs, thr):
    """Median low and high levels sampled at the eye centre."""
    n0 = math.ceil((t[0] - centre_abs) / ui)
    n1 = math.floor((t[-1] - centre_abs) / ui)
    samples = np.interp(np.arange(n0, n1 + 1) * ui + centre_abs, t, v) if n1 >= n0 else v
    hi = samples[samples >= thr.vref]
    lo = samples[samples < thr.vref]
    h = float(np.median(hi)) if len(hi) else thr.vih_ac
    low = float(np.median(lo)) if len(lo) else thr.vil_ac
    return low, h
