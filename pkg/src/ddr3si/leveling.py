"""Write/read leveling delays for a fly-by DIMM.

The controller's training loop is replaced by a direct computation: flight
times along the fly-by chain give the ideal per-lane delays, which are
then rounded to the controller's delay step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .stimulus import Stimulus


class LevelingError(ValueError):
    pass


@dataclass(frozen=True)
class FlybySchedule:
    arrivals: tuple[float, ...]  # per DRAM position, relative to the first tap

    def __post_init__(self):
        a = self.arrivals
        if not a or a[0] != 0.0:
            raise LevelingError("arrival[0] must be 0")
        if any(y < x for x, y in zip(a, a[1:])):
            raise LevelingError("arrivals must be nondecreasing along the chain")

    @property
    def span(self) -> float:
        return self.arrivals[-1]


@dataclass(frozen=True)
class LaneDelay:
    ideal: float
    quantized: float
    residual: float
    tdqss_pass: bool | None = None
    tdqss_margin: float | None = None


@dataclass(frozen=True)
class LevelingSolution:
    kind: str  # "write" or "read"
    step: float
    lanes: dict[str, LaneDelay] = field(default_factory=dict)
    spread: float = 0.0

    def delays(self) -> dict[str, float]:
        return {k: v.quantized for k, v in self.lanes.items()}

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "step_s": self.step,
            "spread_s": self.spread,
            "lanes": {
                k: {
                    "ideal_delay_s": v.ideal,
                    "quantized_delay_s": v.quantized,
                    "residual_s": v.residual,
                    "tdqss_pass": v.tdqss_pass,
                    "tdqss_margin_s": v.tdqss_margin,
                }
                for k, v in self.lanes.items()
            },
        }


def flyby_flight_times(segment_delays) -> FlybySchedule:
    """Arrival time at each tap: cumulative delay of the segments between
    the first tap and that tap."""
    d = [float(x) for x in segment_delays]
    if not d:
        raise LevelingError("segment delay list is empty")
    if any(x <= 0 for x in d):
        raise LevelingError("segment delays must be > 0")
    return FlybySchedule(tuple([0.0] + list(np.cumsum(d))))


def quantize(x: float, step: float) -> float:
    """Nearest multiple of ``step``; exact ties go to the smaller delay."""
    if step <= 0:
        raise LevelingError("step must be > 0")
    # The small bias keeps float noise from flipping exact ties upward.
    k = math.ceil(x / step - 0.5 - 1e-9)
    return k * step


def check_tdqss(skew: float, tck: float) -> tuple[bool, float]:
    """DQS-to-CK skew check: pass iff |skew| <= tCK/4."""
    if tck <= 0:
        raise LevelingError("tck must be > 0")
    limit = 0.25 * tck
    return abs(skew) <= limit, limit - abs(skew)


def _position(lane_to_position, lane, n):
    pos = lane_to_position[lane]
    if not 0 <= pos < n:
        raise LevelingError(f"lane {lane} maps to unknown position {pos}")
    return pos


def compute_write_leveling(sched: FlybySchedule, lane_to_position: dict, step: float,
                           tck: float | None = None) -> LevelingSolution:
    """Launch each lane's strobe when the clock reaches its DRAM."""
    if step <= 0:
        raise LevelingError("step must be > 0")
    lanes = {}
    for lane in lane_to_position:
        ideal = sched.arrivals[_position(lane_to_position, lane, len(sched.arrivals))]
        q = quantize(ideal, step)
        tp, tm = check_tdqss(q - ideal, tck) if tck else (None, None)
        lanes[lane] = LaneDelay(ideal, q, q - ideal, tp, tm)
    return LevelingSolution("write", step, lanes, sched.span)


def compute_read_leveling(sched: FlybySchedule, lane_to_position: dict, lane_return_delays: dict,
                          step: float, tck: float, cas_latency: int) -> LevelingSolution:
    """Delay early lanes so every strobe group reaches the controller with
    the latest one."""
    if step <= 0:
        raise LevelingError("step must be > 0")
    total = {}
    for lane in lane_to_position:
        r = float(lane_return_delays.get(lane, 0.0))
        if r < 0:
            raise LevelingError(f"lane {lane}: return delay must be >= 0")
        total[lane] = sched.arrivals[_position(lane_to_position, lane, len(sched.arrivals))] + r
    latest = max(total.values())
    spread = latest - min(total.values())
    limit = 2 * cas_latency * tck
    if spread > limit:
        raise LevelingError(
            f"read arrival spread {spread * 1e9:.4g} ns exceeds two CAS latencies ({limit * 1e9:.4g} ns)"
        )
    lanes = {}
    for lane, t in total.items():
        ideal = latest - t
        q = quantize(ideal, step)
        lanes[lane] = LaneDelay(ideal, q, q - ideal)
    return LevelingSolution("read", step, lanes, spread)


def apply_leveling(stimuli: dict[str, Stimulus], sol: LevelingSolution) -> dict[str, Stimulus]:
    """Shift each lane's stimulus launch by its leveling delay."""
    missing = [lane for lane in stimuli if lane not in sol.lanes]
    if missing:
        raise LevelingError(f"no leveling delay for lanes {missing}")
    return {lane: s.with_delay(sol.lanes[lane].quantized) for lane, s in stimuli.items()}


# --------------------------------------------------------------------------
# interface helpers


def clock_net(iface) -> str | None:
    """First fly-by net of the clock bus, else the first address-class net."""
    for cls in ("clock", "address_command", "control"):
        for b in iface.buses:
            if b.bus_class == cls:
                for n in b.nets:
                    if iface.topology.nets[n].style == "flyby":
                        return n
    return None


def interface_schedule(iface) -> tuple[FlybySchedule, dict[str, int], dict[str, str]]:
    """Fly-by schedule from the clock topology, plus lane -> tap position and
    lane -> DRAM maps. DRAMs on the same chain are ordered by (DIMM, position)."""
    ck = clock_net(iface)
    drams = iface.drams
    lane_dram = {}
    for a in iface.associations:
        if "lane" in a.subject:
            bus = next(b for b in iface.buses if b.name == a.subject["bus"])
            nets = bus.lanes[a.subject["lane"]]
            owners = [c.name for c in drams if c.name in iface.topology.nets[nets[0]].pins]
            if owners:
                lane_dram[a.subject["lane"]] = owners[0]
    if ck is None:
        sched = FlybySchedule(tuple([0.0] * len(drams))) if drams else FlybySchedule((0.0,))
        pos = {lane: [d.name for d in drams].index(d) for lane, d in lane_dram.items()}
        return sched, pos, lane_dram
    topo = iface.topology.nets[ck]
    ctrl = iface.controller.name
    on_chain = [d for d in drams if d.name in topo.pins]
    t = [path_delay(topo, topo.pins[ctrl], topo.pins[d.name]) for d in on_chain]
    arrivals = tuple(float(x - t[0]) for x in t)
    names = [d.name for d in on_chain]
    pos = {lane: names.index(d) for lane, d in lane_dram.items() if d in names}
    return FlybySchedule(arrivals), pos, lane_dram


def path_delay(topo, a: str, b: str) -> float:
    """Sum of segment delays between topology nodes ``a`` and ``b``."""
    adj: dict[str, list] = {}
    for s in topo.segments:
        adj.setdefault(s.a, []).append((s.b, s.delay))
        adj.setdefault(s.b, []).append((s.a, s.delay))
    dist = {a: 0.0}
    stack = [a]
    while stack:
        x = stack.pop()
        for y, d in adj.get(x, []):
            if y not in dist:
                dist[y] = dist[x] + d
                stack.append(y)
    if b not in dist:
        raise LevelingError(f"no path from {a} to {b}")
    return dist[b]


def lane_return_delays(iface, lane_dram: dict[str, str]) -> dict[str, float]:
    """Strobe flight time from each lane's DRAM back to the controller."""
    ctrl = iface.controller.name
    out = {}
    for a in iface.associations:
        lane = a.subject.get("lane")
        if lane in lane_dram:
            topo = iface.topology.nets[a.reference[0]]
            out[lane] = path_delay(topo, topo.pins[ctrl], topo.pins[lane_dram[lane]])
    return out


def leveling_report(iface, return_delays: dict | None = None) -> dict:
    """Write and read leveling for every lane, as a JSON-ready dict."""
    tb = iface.timing_base
    sched, pos, lane_dram = interface_schedule(iface)
    wl = compute_write_leveling(sched, pos, tb.leveling_step, tb.tck)
    if return_delays is None:
        return_delays = lane_return_delays(iface, lane_dram)
    out = {"arrivals_s": list(sched.arrivals), "lane_dram": lane_dram, "write": wl.to_dict()}
    try:
        rl = compute_read_leveling(sched, pos, return_delays, tb.leveling_step, tb.tck, tb.cas_latency)
        out["read"] = rl.to_dict()
    except LevelingError as exc:
        out["read"] = {"error": str(exc)}
    return out


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
