"""Circuit construction from an :class:`~ddr3si.netlist.Interface`.

Node names are ``<net>.<topology node>``. Each pin gets the buffer that
:func:`~ddr3si.netlist.resolve_models` assigns to it: drivers become
:class:`~ddr3si.circuit.Driver` instances, receivers and stand-by pins
become their termination legs, and every buffer adds its ``c_comp`` to
ground.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .circuit import Circuit, CircuitError
from .netlist import Interface, Scenario, nets_in_scope, resolve_models
from .stimulus import Stimulus, stable_seed


class BuildError(ValueError):
    pass


@dataclass(frozen=True)
class StimulusPlan:
    """How drivers are stimulated in one scenario.

    ``launch`` holds extra per-net launch delays (leveling); strobes and
    clocks are offset by half a UI so they land in the centre of the data
    eye.
    """

    n_bits: int
    prbs_order: int = 7
    launch: dict[str, float] = field(default_factory=dict)
    center_strobe: bool = True
    overrides: dict[str, Stimulus] = field(default_factory=dict)


def coupled_impedances(z0: float, k: float) -> tuple[float, float]:
    """Even/odd impedances of a symmetric pair with coupling coefficient k."""
    if not 0 <= k < 1:
        raise BuildError("coupling coefficient must be in [0, 1)")
    r = math.sqrt((1 + k) / (1 - k))
    return z0 * r, z0 / r


def default_plan(iface: Interface, n_bits: int | None = None) -> StimulusPlan:
    sim = iface.simulation
    n = sim.bits + sim.warmup_ui if n_bits is None else n_bits
    return StimulusPlan(n_bits=n, prbs_order=sim.prbs_order)


def strobe_polarity(iface: Interface, net: str) -> int | None:
    """+1 / -1 for the true / complement leg of a strobe or clock pair."""
    for a in iface.associations:
        if net == a.reference[0]:
            return 1
        if net == a.reference[1]:
            return -1
    if iface.bus_of(net).bus_class == "clock":
        return 1 if not net.endswith(("_N", "#", "N", "_n")) else -1
    return None


def net_stimulus(iface: Interface, s: Scenario, net: str, plan: StimulusPlan) -> Stimulus:
    if net in plan.overrides:
        return plan.overrides[net]
    tb = iface.timing_base
    ui = tb.ui
    extra = plan.launch.get(net, 0.0)
    bus = iface.bus_of(net)
    pol = strobe_polarity(iface, net)
    if pol is not None:
        offset = ui / 2 if plan.center_strobe else 0.0
        # One clock period per two UI, starting after the first data bit.
        return Stimulus("clock", ui, ui + offset + extra, n_bits=plan.n_bits,
                        period=tb.tck, invert=pol < 0)
    bit_time = ui if bus.bidirectional else tb.tck
    n_bits = plan.n_bits if bus.bidirectional else max(plan.n_bits // 2, 8)
    seed = stable_seed(net, s.key, order=plan.prbs_order)
    return Stimulus("prbs", bit_time, extra, prbs_order=plan.prbs_order, seed=seed, n_bits=n_bits)


def stop_time(iface: Interface, plan: StimulusPlan, nets=()) -> float:
    """Long enough for every launched bit plus settling of the slowest net."""
    ui = iface.timing_base.ui
    flight = max((sum(seg.delay for seg in iface.topology.nets[n].segments) for n in nets), default=0.0)
    extra = max(plan.launch.values(), default=0.0)
    return (plan.n_bits + 2) * ui + extra + 2 * flight


def _resolve_pairs(iface: Interface, victim: str):
    """Victim-side coupled segments, split when a segment couples to several
    aggressors: {segment id: [(aggressor, pair), ...]}."""
    out: dict[str, list] = {}
    for p in iface.topology.pairs_for(victim):
        other = p.nets[1] if p.nets[0] == victim else p.nets[0]
        out.setdefault(p.segment, []).append((other, p))
    return out


def build_circuit(
    iface: Interface,
    s: Scenario,
    net: str | list[str],
    analysis: str = "reflection",
    plan: StimulusPlan | None = None,
) -> Circuit:
    """Circuit for ``net`` (or several independent nets) in scenario ``s``.

    ``reflection`` simulates the net alone. ``comprehensive`` adds every
    net declared as coupled to it, with its own buffers and stimulus; a
    segment shared with k aggressors is cut into k equal pieces, each
    coupled to one of them.
    """
    if analysis not in ("reflection", "comprehensive"):
        raise BuildError(f"unknown analysis {analysis!r}")
    victims = [net] if isinstance(net, str) else list(net)
    scope = set(nets_in_scope(iface, s))
    for v in victims:
        if v not in iface.topology.nets:
            raise BuildError(f"net {v!r} has no topology")
        if v not in scope:
            raise BuildError(f"net {v!r} is not in scope of scenario {s.key}")
    plan = plan or default_plan(iface)
    c = Circuit(vddq=iface.thresholds_for("data").vddq)
    c.victim = victims[0]

    split: dict[str, dict[str, list]] = {}  # net -> segment -> [(partner, pair, index, count)]
    all_nets = list(victims)
    if analysis == "comprehensive":
        for v in victims:
            for seg_id, partners in _resolve_pairs(iface, v).items():
                count = len(partners)
                for idx, (agg, pair) in enumerate(partners):
                    split.setdefault(v, {}).setdefault(seg_id, []).append((agg, pair, idx, count))
                    split.setdefault(agg, {}).setdefault(seg_id, []).append((v, pair, idx, count))
                    if agg not in all_nets:
                        all_nets.append(agg)
                        c.aggressors.append(agg)

    roles = resolve_models(iface, s, all_nets)
    corner = iface.library.pvt_corners[s.corner]
    lib = iface.library
    done_pairs = set()
    for n in all_nets:
        topo = iface.topology.nets[n]

        def node(x, _n=n):
            return None if x in (None, "0", "gnd") else f"{_n}.{x}"

        for seg in topo.segments:
            entries = split.get(n, {}).get(seg.id)
            if not entries:
                c.add_line(f"{n}.{seg.id}", node(seg.a), node(seg.b), seg.z0, seg.delay)
                continue
            count = entries[0][3]
            pieces = [node(seg.a)] + [f"{n}.{seg.id}~{j}" for j in range(1, count)] + [node(seg.b)]
            coupled_at = {idx: (partner, pair) for partner, pair, idx, _ in entries}
            for j in range(count):
                a, b = pieces[j], pieces[j + 1]
                if j not in coupled_at:
                    c.add_line(f"{n}.{seg.id}#{j}", a, b, seg.z0, seg.delay / count)
                    continue
                partner, pair = coupled_at[j]
                key = (pair.nets, pair.segment, j)
                if key in done_pairs:
                    continue
                done_pairs.add(key)
                # Geometry of the partner's piece j.
                pseg = iface.topology.nets[partner].segment(seg.id)
                pcount = split[partner][seg.id][0][3]
                if pcount != count:
                    raise BuildError(
                        f"segment {seg.id}: {n} and {partner} split differently ({count} vs {pcount})"
                    )
                ppieces = [f"{partner}.{pseg.a}"] + [f"{partner}.{seg.id}~{q}" for q in range(1, count)] \
                    + [f"{partner}.{pseg.b}"]
                pj = next(idx for other, _, idx, _ in split[partner][seg.id] if other == n)
                ze, zo = coupled_impedances(seg.z0, pair.k)
                td = seg.delay / count
                tde = pair.td_even / count if pair.td_even else td
                tdo = pair.td_odd / count if pair.td_odd else td
                c.add_coupled(f"{n}~{partner}.{seg.id}#{j}", a, b, ppieces[pj], ppieces[pj + 1],
                              ze, zo, tde, tdo)
            # Partner pieces not coupled to anything are emitted when the
            # partner net itself is processed.
        for x in topo.lumped:
            if x.kind == "R":
                if x.b is None and x.value == 0:
                    raise BuildError(f"net {n}: zero-ohm resistor to ground")
                c.add_resistor(node(x.a), node(x.b), x.value)
            else:
                c.add_capacitor(node(x.a), node(x.b), x.value)
        for t in topo.terminations:
            c.add_resistor(node(t.node), None, t.r, t.v)
        for comp, tnode in topo.pins.items():
            pin = node(tnode)
            c.pins[(n, comp)] = pin
            role = roles[(comp, n)]
            c.roles[(n, comp)] = (role.role, role.model)
            if role.role == "driver":
                m = lib.driver(role.model)
                stim = net_stimulus(iface, s, n, plan)
                c.add_driver(pin, m, corner, stim, name=f"{n}:{comp}")
                c.add_capacitor(pin, None, m.corner(s.corner).c_comp)
            else:
                o = lib.termination(role.model)
                for r, rail in o.legs(corner, role.odt_on):
                    c.add_resistor(pin, None, r, rail)
                c.add_capacitor(pin, None, o.c_comp)
    if not c.drivers:
        raise BuildError(f"no driver on {victims} in scenario {s.key}")
    try:
        c.check()
    except CircuitError as exc:
        raise BuildError(str(exc)) from None
    return c
