"""Sampled voltage traces and their CSV form."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Trace:
    v: np.ndarray
    dt: float
    t0: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.v)) * self.dt

    def __len__(self):
        return len(self.v)

    def value_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.v))

    def shifted(self, delta: float) -> "Trace":
        return Trace(self.v, self.dt, self.t0 + delta)


@dataclass
class WaveformSet:
    dt: float
    traces: dict[str, np.ndarray]
    t0: float = 0.0
    quantized: dict[str, tuple[float, float]] = field(default_factory=dict)
    effective_td: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.traces.values()}
        if len(lengths) > 1:
            raise ValueError("all traces must have the same length")

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.traces.values()))) if self.traces else 0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) * self.dt

    def trace(self, node: str) -> Trace:
        return Trace(self.traces[node], self.dt, self.t0)

    def subset(self, nodes) -> "WaveformSet":
        return WaveformSet(self.dt, {n: self.traces[n] for n in nodes}, self.t0,
                           dict(self.quantized), dict(self.effective_td))

    def merged(self, other: "WaveformSet") -> "WaveformSet":
        if other.dt != self.dt or other.n_samples != self.n_samples:
            raise ValueError("cannot merge waveform sets with different sampling")
        tr = dict(self.traces)
        tr.update(other.traces)
        return WaveformSet(self.dt, tr, self.t0, {**self.quantized, **other.quantized},
                           {**self.effective_td, **other.effective_td})

    def to_csv(self, path: str | Path, nodes=None):
        nodes = list(self.traces) if nodes is None else list(nodes)
        t = self.times
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", *nodes])
            cols = [self.traces[n] for n in nodes]
            for k in range(len(t)):
                w.writerow([eng(t[k])] + [eng(c[k]) for c in cols])

    @classmethod
    def from_csv(cls, path: str | Path) -> "WaveformSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        if not header or header[0] != "time_s":
            raise ValueError(f"{path}: first column must be time_s")
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
        t = data[:, 0]
        dt = float(np.mean(np.diff(t))) if len(t) > 1 else 0.0
        # Rebuild dt from the end points to avoid accumulating text rounding.
        if len(t) > 1:
            dt = (t[-1] - t[0]) / (len(t) - 1)
        return cls(dt, {name: data[:, k + 1].copy() for k, name in enumerate(header[1:])}, float(t[0]))


def eng(x: float, digits: int = 12) -> str:
    """Engineering notation (exponent a multiple of 3) with ``digits``
    significant digits."""
    x = float(x)
    if x == 0 or not math.isfinite(x):
        return "0" if x == 0 else repr(x)
    exp = int(math.floor(math.log10(abs(x))))
    exp3 = 3 * (exp // 3)
    mant = x / 10.0**exp3
    # Rounding may push the mantissa to 1000.
    lead = len(str(int(abs(mant))))
    s = f"{mant:.{max(digits - lead, 0)}f}"
    if abs(float(s)) >= 1000:
        exp3 += 3
        mant = x / 10.0**exp3
        s = f"{mant:.{digits - 1}f}"
    return f"{s}e{exp3}" if exp3 else s
