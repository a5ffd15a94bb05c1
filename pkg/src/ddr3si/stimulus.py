"""Bit-pattern stimuli: PRBS, explicit patterns and clocks."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

# Fibonacci LFSR feedback taps (1-based bit positions), x^n + x^k + 1.
PRBS_TAPS = {
    7: (7, 6),
    9: (9, 5),
    11: (11, 9),
    15: (15, 14),
}


def prbs_bits(order: int, seed: int, n: int) -> np.ndarray:
    """First ``n`` output bits of the maximal-length PRBS of ``order``.

    The register is shifted left; the feedback bit is fed into bit 0 and is
    also the emitted bit. ``seed`` is masked to ``order`` bits and must be
    non-zero after masking.
    """
    if order not in PRBS_TAPS:
        raise ValueError(f"PRBS order must be one of {sorted(PRBS_TAPS)}, got {order}")
    mask = (1 << order) - 1
    state = seed & mask
    if state == 0:
        raise ValueError("PRBS seed must be non-zero")
    a, b = PRBS_TAPS[order]
    out = np.empty(n, dtype=np.uint8)
    for k in range(n):
        bit = ((state >> (a - 1)) ^ (state >> (b - 1))) & 1
        state = ((state << 1) | bit) & mask
        out[k] = bit
    return out


def stable_seed(*names: str, order: int = 7) -> int:
    """Non-zero PRBS seed derived from a stable hash of ``names``."""
    h = zlib.crc32("|".join(names).encode())
    return h % ((1 << order) - 1) + 1


@dataclass(frozen=True)
class Stimulus:
    """Drive pattern for one driver.

    ``kind`` is ``"prbs"``, ``"pattern"`` or ``"clock"``. Bits are launched
    at ``launch_delay + k * bit_time``; before the first bit the driver
    rests at the first bit's level. A clock toggles every half ``period``
    scaled by ``duty`` and rests low before ``launch_delay``.
    """

    kind: str
    bit_time: float
    launch_delay: float = 0.0
    prbs_order: int = 7
    seed: int = 1
    n_bits: int = 64
    bits: tuple[int, ...] = ()
    period: float = 0.0
    duty: float = 0.5
    invert: bool = False

    def __post_init__(self):
        if self.kind not in ("prbs", "pattern", "clock"):
            raise ValueError(f"unknown stimulus kind {self.kind!r}")
        if self.bit_time <= 0:
            raise ValueError("bit_time must be > 0")
        if self.launch_delay < 0:
            raise ValueError("launch_delay must be >= 0")
        if self.kind == "clock" and self.period <= 0:
            object.__setattr__(self, "period", 2 * self.bit_time)

    def with_delay(self, extra: float) -> "Stimulus":
        return replace(self, launch_delay=self.launch_delay + extra)

    def bit_sequence(self) -> np.ndarray:
        if self.kind == "prbs":
            b = prbs_bits(self.prbs_order, self.seed, self.n_bits)
        elif self.kind == "pattern":
            b = np.asarray(self.bits, dtype=np.uint8)
        else:
            b = np.tile(np.array([1, 0], dtype=np.uint8), self.n_bits // 2 + 1)[: self.n_bits]
        return 1 - b if self.invert else b

    def edges(self) -> tuple[int, list[tuple[float, int]]]:
        """Initial level and the ordered list of (time, new_level) changes."""
        if self.kind == "clock":
            lvl0 = 1 if self.invert else 0
            out = []
            for k in range((self.n_bits + 1) // 2):
                t = self.launch_delay + k * self.period
                out.append((t, 1 - lvl0))
                out.append((t + self.duty * self.period, lvl0))
            return lvl0, out
        b = self.bit_sequence()
        if len(b) == 0:
            return 0, []
        changes = [
            (self.launch_delay + k * self.bit_time, int(b[k]))
            for k in range(1, len(b))
            if b[k] != b[k - 1]
        ]
        return int(b[0]), changes


def weight_trace(stim: Stimulus, ramp_rise: float, ramp_fall: float, times: np.ndarray) -> np.ndarray:
    """Pull-up weight sampled at ``times`` for a driver following ``stim``.

    Each edge ramps linearly from the weight it finds at the edge time, so
    an edge arriving mid-ramp reverses without a jump.
    """
    lvl0, changes = stim.edges()
    w = np.full(times.shape, float(lvl0))
    cur = float(lvl0)
    for k, (te, lvl) in enumerate(changes):
        t_next = changes[k + 1][0] if k + 1 < len(changes) else np.inf
        sel = slice(np.searchsorted(times, te), np.searchsorted(times, t_next))
        if lvl == 1:
            seg = np.minimum(cur + (times[sel] - te) / ramp_rise, 1.0)
            end = min(cur + (t_next - te) / ramp_rise, 1.0)
        else:
            seg = np.maximum(cur - (times[sel] - te) / ramp_fall, 0.0)
            end = max(cur - (t_next - te) / ramp_fall, 0.0)
        w[sel] = seg
        cur = end
    return w


def stimulus_to_dict(s: Stimulus) -> dict:
    d = {"kind": s.kind, "bit_time": s.bit_time, "launch_delay": s.launch_delay}
    if s.kind == "prbs":
        d.update(prbs_order=s.prbs_order, seed=s.seed, n_bits=s.n_bits)
    elif s.kind == "pattern":
        d["bits"] = list(s.bits)
    else:
        d.update(period=s.period, duty=s.duty, n_bits=s.n_bits)
    if s.invert:
        d["invert"] = True
    return d
