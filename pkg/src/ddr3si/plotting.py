"""Eye-diagram rendering (SVG)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PolyCollection  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .eye import EyeDiagram  # noqa: E402


def eye_figure(eye: EyeDiagram, title: str = ""):
    """Density map of the folded eye, with the required valid window and
    the AC input levels overlaid."""
    fig, ax = plt.subplots(figsize=(6, 4))
    te, ve = eye.t_edges * 1e9, eye.v_edges
    # One vector cell per occupied bin keeps the SVG small and diffable.
    i, j = np.nonzero(eye.density)
    verts = np.stack([np.stack([te[i], ve[j]], -1), np.stack([te[i + 1], ve[j]], -1),
                      np.stack([te[i + 1], ve[j + 1]], -1), np.stack([te[i], ve[j + 1]], -1)], 1)
    cells = PolyCollection(verts, array=eye.density[i, j].astype(float), cmap="viridis",
                           edgecolors="none")
    ax.add_collection(cells)
    fig.colorbar(cells, ax=ax, label="samples")
    if eye.valid_levels is not None:
        for v in eye.valid_levels:
            ax.axhline(v, color="0.6", lw=0.8, ls="--")
    if eye.valid_window is not None and eye.valid_levels is not None:
        a, b = (x * 1e9 for x in eye.valid_window)
        lo, hi = eye.valid_levels
        spans = [(a, b)] if a <= b else [(a, te[-1]), (0.0, b)]
        for x0, x1 in spans:
            ax.add_patch(Rectangle((x0, lo), x1 - x0, hi - lo, fill=False, ec="tab:red", lw=1.2))
    ax.set_xlim(te[0], te[-1])
    ax.set_ylim(ve[0], ve[-1])
    ax.set_xlabel("time in UI [ns]")
    ax.set_ylabel("voltage [V]")
    state = "closed" if eye.closed else f"width {eye.width * 1e12:.0f} ps, height {eye.height * 1e3:.0f} mV"
    ax.set_title(f"{title}  {state}".strip(), fontsize=9)
    fig.tight_layout()
    return fig


def eye_svg(eye: EyeDiagram, path: str | Path, title: str = "") -> Path:
    """Write the eye as a reproducible SVG (no timestamps, fixed ids)."""
    path = Path(path)
    with plt.rc_context({"svg.hashsalt": "ddr3si", "svg.fonttype": "none"}):
        fig = eye_figure(eye, title)
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
