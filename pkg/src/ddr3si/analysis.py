"""Per-scenario simulation and measurement of one byte lane.

A lane is measured at its receiving pins: the DRAM on writes, the
controller on reads. Data bits are sampled on both edges of the
differential strobe; edges within the warm-up window or without a data
transition on the relevant side are skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .build import StimulusPlan, build_circuit, default_plan, stop_time
from .derating import DeratingError
from .eye import EyeDiagram, eye_diagram
from .leveling import interface_schedule, compute_write_leveling, path_delay
from .netlist import Interface, Scenario, nets_in_scope
from .simulate import default_timestep, simulate
from .timing import (
    AcLevelError,
    MeasurementError,
    NoiseMetrics,
    crossings,
    data_slew,
    derate_edge,
    diff_slew,
    hold_time,
    noise_metrics,
    setup_time,
)
from .waveforms import Trace, WaveformSet


@dataclass
class EdgeResult:
    strobe_time: float
    strobe_edge: str
    t_ds: float | None = None
    t_dh: float | None = None
    setup_slew: float | None = None
    hold_slew: float | None = None
    dqs_slew: float | None = None
    delta_ds: float = 0.0
    delta_dh: float = 0.0
    setup_margin: float | None = None
    hold_margin: float | None = None
    passed: bool = True
    note: str = ""


@dataclass
class NetResult:
    """Measurement of one net (or strobe pair) in one scenario."""

    scenario: str
    net: str
    kind: str  # "data" | "strobe"
    receiver: str
    status: str = "ok"  # ok | error
    error: str = ""
    edges: list[EdgeResult] = field(default_factory=list)
    setup_margin: float | None = None
    hold_margin: float | None = None
    t_ds: float | None = None
    t_dh: float | None = None
    min_setup_slew: float | None = None
    min_hold_slew: float | None = None
    min_dqs_slew: float | None = None
    eye: EyeDiagram | None = None
    noise: NoiseMetrics | None = None
    passed: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def margin(self) -> float | None:
        ms = [m for m in (self.setup_margin, self.hold_margin) if m is not None]
        return min(ms) if ms else None

    def row(self) -> dict:
        """Flat, JSON-ready summary."""
        op, target, corner = self.scenario.split(":")
        eye = self.eye
        nz = self.noise
        d = {
            "scenario": self.scenario,
            "operation": op,
            "target": target,
            "corner": corner,
            "net": self.net,
            "kind": self.kind,
            "receiver": self.receiver,
            "status": self.status,
            "pass": bool(self.passed),
            "setup_margin_s": self.setup_margin,
            "hold_margin_s": self.hold_margin,
            "t_ds_s": self.t_ds,
            "t_dh_s": self.t_dh,
            "edges_measured": sum(1 for e in self.edges if e.t_ds is not None or e.t_dh is not None),
            "min_setup_slew_v_per_ns": self.min_setup_slew,
            "min_hold_slew_v_per_ns": self.min_hold_slew,
            "min_dqs_slew_v_per_ns": self.min_dqs_slew,
            "eye_width_s": None if eye is None else eye.width,
            "eye_height_v": None if eye is None else eye.height,
            "eye_closed": None if eye is None else eye.closed,
            "overshoot_v": None if nz is None else nz.overshoot,
            "undershoot_v": None if nz is None else nz.undershoot,
            "ac_noise_margin_high_v": None if nz is None else nz.ac_noise_margin_high,
            "ac_noise_margin_low_v": None if nz is None else nz.ac_noise_margin_low,
            "dc_noise_margin_high_v": None if nz is None else nz.dc_noise_margin_high,
            "dc_noise_margin_low_v": None if nz is None else nz.dc_noise_margin_low,
            "error": self.error,
            "notes": "; ".join(self.notes),
        }
        return {k: _plain(v) for k, v in d.items()}


def _plain(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


@dataclass(frozen=True)
class LaneGroup:
    """Strobe pair plus the data nets it latches, for one scenario."""

    strobe: tuple[str, str]
    data: tuple[str, ...]

    @property
    def label(self) -> str:
        p = self.strobe[0]
        return p[:-2] if p.endswith(("_P", "_T")) else p

    @property
    def nets(self) -> list[str]:
        return [*self.strobe, *self.data]


def lane_groups(iface: Interface, s: Scenario, nets=None) -> list[LaneGroup]:
    """Group the bidirectional nets in scope by their strobe association."""
    scope = [n for n in nets_in_scope(iface, s) if iface.bus_of(n).bidirectional]
    if nets is not None:
        wanted = set(nets)
        scope = [n for n in scope if n in wanted]
    refs = iface.reference_nets()
    groups: dict[tuple[str, str], list[str]] = {}
    order = []
    for n in scope:
        if n in refs:
            continue
        a = iface.association_for(n)
        if a is None:
            continue
        if a.reference not in groups:
            groups[a.reference] = []
            order.append(a.reference)
        groups[a.reference].append(n)
    return [LaneGroup(ref, tuple(groups[ref])) for ref in order]


def receiver_of(iface: Interface, s: Scenario) -> str:
    return s.target if s.operation == "write" else iface.controller.name


def write_launch(iface: Interface, s: Scenario, groups: list[LaneGroup]) -> dict[str, float]:
    """Write-leveling launch delays for the target's lanes."""
    if s.operation != "write":
        return {}
    sched, pos, lane_dram = interface_schedule(iface)
    if not pos:
        return {}
    sol = compute_write_leveling(sched, pos, iface.timing_base.leveling_step, iface.timing_base.tck)
    out = {}
    for lane, dram in lane_dram.items():
        if dram != s.target or lane not in sol.lanes:
            continue
        for g in groups:
            for n in g.nets:
                if iface.lane_of(n) == lane or n in g.strobe:
                    out[n] = sol.lanes[lane].quantized
    return out


@dataclass
class ScenarioRun:
    scenario: Scenario
    dt: float
    t_stop: float
    plan: StimulusPlan
    waves: dict[str, WaveformSet]  # circuit label -> waveforms
    pins: dict[tuple[str, str], tuple[str, str]]  # (net, comp) -> (circuit label, node)
    quantized: dict[str, tuple[float, float]]


def simulate_scenario(iface: Interface, s: Scenario, groups: list[LaneGroup], analysis: str = "reflection",
                      leveling: bool = True, n_bits: int | None = None, dt: float | None = None) -> ScenarioRun:
    """Simulate every net of ``groups``.

    Reflection mode puts all nets in a single circuit (they do not
    interact); comprehensive mode simulates the strobe pairs together and
    each data net with its coupled neighbours.
    """
    plan = default_plan(iface, n_bits)
    if leveling:
        plan = replace(plan, launch=write_launch(iface, s, groups))
    nets = [n for g in groups for n in g.nets]
    circuits = {}
    if analysis == "reflection":
        circuits["all"] = build_circuit(iface, s, nets, "reflection", plan)
    else:
        circuits["strobes"] = build_circuit(iface, s, [n for g in groups for n in g.strobe],
                                            "reflection", plan)
        for g in groups:
            for n in g.data:
                circuits[n] = build_circuit(iface, s, n, "comprehensive", plan)
    ui = iface.timing_base.ui
    if dt is None:
        dt = iface.simulation.dt or min(default_timestep(c, ui) for c in circuits.values())
    everything = nets + [a for c in circuits.values() for a in c.aggressors]
    t_stop = stop_time(iface, plan, everything)
    waves, pins, quantized = {}, {}, {}
    for label, c in circuits.items():
        w = simulate(c, dt, t_stop)
        waves[label] = w
        quantized.update(w.quantized)
        for (net, comp), node in c.pins.items():
            if net in nets and (net, comp) not in pins:
                if label in ("all", "strobes") or net == label:
                    pins[(net, comp)] = (label, node)
    return ScenarioRun(s, dt, t_stop, plan, waves, pins, quantized)


def _trace(run: ScenarioRun, net: str, comp: str) -> Trace:
    label, node = run.pins[(net, comp)]
    return run.waves[label].trace(node)


def _net_flight(iface: Interface, net: str, a: str, b: str) -> float:
    topo = iface.topology.nets[net]
    return path_delay(topo, topo.pins[a], topo.pins[b])


def measure_lane(iface: Interface, run: ScenarioRun, g: LaneGroup, method: str = "nominal") -> list[NetResult]:
    """Strobe row followed by one row per data net."""
    s = run.scenario
    thr = iface.thresholds_for("data")
    tb = iface.timing_base
    ui = tb.ui
    rcv = receiver_of(iface, s)
    drv = s.target if s.operation == "read" else iface.controller.name
    p, n = g.strobe
    tp, tn = _trace(run, p, rcv), _trace(run, n, rcv)
    flight = _net_flight(iface, p, drv, rcv)
    launch = run.plan.launch.get(p, 0.0)
    t_min = launch + flight + iface.simulation.warmup_ui * ui
    t_data_end = launch + flight + run.plan.n_bits * ui
    level = thr.vih_ac - thr.vref

    strobe = NetResult(s.key, g.label, "strobe", rcv)
    vd = tp.v - tn.v
    xs = crossings(vd, 0.0, "both", tp.dt, tp.t0)
    xs = xs[(xs >= t_min) & (xs <= t_data_end - ui / 2)]
    edges, slews = [], []
    for t in xs:
        k = min(int((t - tp.t0) / tp.dt), len(vd) - 2)
        direction = "rising" if vd[k + 1] > vd[k] else "falling"
        try:
            sr = diff_slew(tp, tn, direction, level, method, near=t).value
        except MeasurementError as exc:
            sr = None
            strobe.notes.append(f"strobe edge at {t:.4e} s: {exc}")
        edges.append((float(t), direction, sr))
        if sr is not None:
            slews.append(sr)
    np_ = noise_metrics(tp, thr, t_min=t_min)
    nn = noise_metrics(tn, thr, t_min=t_min)
    strobe.noise = _worse_noise(np_, nn)
    strobe.min_dqs_slew = min(slews) if slews else None
    strobe.passed = bool(edges) and _noise_ok(strobe.noise, thr) and len(slews) == len(edges)
    if not edges:
        strobe.notes.append("no strobe edges after warm-up")
    out = [strobe]

    table = iface.derating.get("data", "differential")
    mode = iface.simulation.interpolation
    for net in g.data:
        res = NetResult(s.key, net, "data", rcv)
        tr = _trace(run, net, rcv)
        for ts, direction, sr in edges:
            e = EdgeResult(ts, direction, dqs_slew=sr)
            tc_s = tc_h = None
            edge_s = edge_h = None
            try:
                e.t_ds, edge_s, tc_s = setup_time(tr, ts, thr, window=ui)
            except AcLevelError as exc:
                e.passed = False
                e.note = str(exc)
            except MeasurementError:
                pass
            try:
                e.t_dh, edge_h, tc_h = hold_time(tr, ts, thr, window=ui)
            except MeasurementError:
                pass
            if e.t_ds is None and e.t_dh is None and e.passed:
                continue
            try:
                if e.t_ds is not None:
                    e.setup_slew = data_slew(tr, thr, "setup", edge_s, method, near=tc_s).value
                if e.t_dh is not None:
                    e.hold_slew = data_slew(tr, thr, "hold", edge_h, method, near=tc_h).value
            except MeasurementError as exc:
                e.passed = False
                e.note = str(exc)
            if sr is None:
                e.passed = False
                e.note = e.note or "strobe slew unavailable"
            elif e.passed and (e.setup_slew is not None or e.hold_slew is not None):
                try:
                    # Missing sides borrow the other side's slew for the lookup only.
                    ss = e.setup_slew if e.setup_slew is not None else e.hold_slew
                    hs = e.hold_slew if e.hold_slew is not None else e.setup_slew
                    e.delta_ds, e.delta_dh = derate_edge(table, ss, hs, sr, mode)
                except DeratingError as exc:
                    e.passed = False
                    e.note = f"derating: {exc}"
            base_ds, base_dh = tb.setup["data"], tb.hold["data"]
            if e.t_ds is not None:
                e.setup_margin = e.t_ds + e.delta_ds - base_ds
            if e.t_dh is not None:
                e.hold_margin = e.t_dh + e.delta_dh - base_dh
            ok = [m >= 0 for m in (e.setup_margin, e.hold_margin) if m is not None]
            e.passed = e.passed and all(ok)
            res.edges.append(e)
        _aggregate(res)
        t_end = min(t_data_end + ui, tr.t0 + (len(tr) - 1) * tr.dt)
        k0 = int(math.ceil((t_min - tr.t0) / tr.dt))
        k1 = int((t_end - tr.t0) / tr.dt)
        seg = Trace(tr.v[k0:k1 + 1], tr.dt, tr.t0 + k0 * tr.dt)
        res.noise = noise_metrics(seg, thr, ui=ui, offset=launch + flight)
        window = None
        if edges:
            ts0 = edges[0][0]
            dds = [e.delta_ds for e in res.edges if e.t_ds is not None] or [0.0]
            ddh = [e.delta_dh for e in res.edges if e.t_dh is not None] or [0.0]
            window = (ts0 - (tb.setup["data"] - max(dds)), ts0 + (tb.hold["data"] - max(ddh)))
        try:
            res.eye = eye_diagram(seg, ui, None, thr, window, warmup_ui=0)
        except ValueError as exc:
            res.notes.append(f"eye: {exc}")
        timing_ok = bool(res.edges) and all(e.passed for e in res.edges)
        if not res.edges:
            res.notes.append("no measurable data edges")
        failed = [e.note for e in res.edges if e.note]
        if failed:
            res.notes.append(f"{len(failed)} edge(s) flagged: {failed[0]}")
        if not _noise_ok(res.noise, thr):
            res.notes.append("overshoot/undershoot beyond limit")
        res.passed = timing_ok and _noise_ok(res.noise, thr) and (res.eye is not None and not res.eye.closed)
        out.append(res)
    return out


def _aggregate(res: NetResult):
    def mn(xs):
        xs = [x for x in xs if x is not None]
        return min(xs) if xs else None

    res.setup_margin = mn(e.setup_margin for e in res.edges)
    res.hold_margin = mn(e.hold_margin for e in res.edges)
    res.t_ds = mn(e.t_ds for e in res.edges)
    res.t_dh = mn(e.t_dh for e in res.edges)
    res.min_setup_slew = mn(e.setup_slew for e in res.edges)
    res.min_hold_slew = mn(e.hold_slew for e in res.edges)
    res.min_dqs_slew = mn(e.dqs_slew for e in res.edges)


def _worse_noise(a: NoiseMetrics, b: NoiseMetrics) -> NoiseMetrics:
    def lo(x, y):
        xs = [v for v in (x, y) if v is not None]
        return min(xs) if xs else None

    return NoiseMetrics(
        max(a.overshoot, b.overshoot), max(a.undershoot, b.undershoot),
        lo(a.ac_noise_margin_high, b.ac_noise_margin_high), lo(a.ac_noise_margin_low, b.ac_noise_margin_low),
        lo(a.dc_noise_margin_high, b.dc_noise_margin_high), lo(a.dc_noise_margin_low, b.dc_noise_margin_low),
    )


def _noise_ok(nz: NoiseMetrics | None, thr) -> bool:
    if nz is None:
        return False
    return nz.overshoot <= thr.overshoot_limit and nz.undershoot <= thr.undershoot_limit


def run_scenario(iface: Interface, s: Scenario, analysis: str = "reflection", leveling: bool = True,
                 nets=None, n_bits: int | None = None, dt: float | None = None,
                 keep_runs: bool = False):
    """Simulate and measure every lane of ``s``. Returns the NetResult list
    (and the ScenarioRun when ``keep_runs``)."""
    groups = lane_groups(iface, s, nets)
    run = simulate_scenario(iface, s, groups, analysis, leveling, n_bits, dt)
    results = []
    for g in groups:
        results += measure_lane(iface, run, g)
    return (results, run) if keep_runs else results


def measure_waves(iface: Interface, s: Scenario, waves: WaveformSet, net: str,
                  plan: StimulusPlan | None = None) -> list[NetResult]:
    """Measure ``net`` (and its strobe) from a saved waveform set whose node
    names follow the ``<net>.<topology node>`` convention."""
    a = iface.association_for(net) if net not in iface.reference_nets() else None
    if a is None:
        ref = next(x.reference for x in iface.associations if net in x.reference)
        data = ()
    else:
        ref = a.reference
        data = (net,)
    g = LaneGroup(ref, data)
    plan = plan or default_plan(iface)
    if s.operation == "write":
        plan = replace(plan, launch=write_launch(iface, s, [g]))
    pins = {}
    for n in g.nets:
        for comp, tnode in iface.topology.nets[n].pins.items():
            pins[(n, comp)] = ("w", f"{n}.{tnode}")
    run = ScenarioRun(s, waves.dt, waves.times[-1], plan, {"w": waves}, pins, dict(waves.quantized))
    res = measure_lane(iface, run, g)
    return res if data else res[:1]
