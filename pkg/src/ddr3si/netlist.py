"""Declarative DDR3 interface model.

An :class:`Interface` is loaded once from a JSON config document, checked
against the schema and the structural rules below, and then shared
read-only by every downstream stage.

* exactly one component is the controller;
* every net belongs to exactly one bus and every data or address/command
  net (strobes and clocks excepted) to exactly one signal association;
* bidirectional buses are latched on both edges of a differential strobe,
  unidirectional ones on a clock edge;
* DRAMs on one DIMM occupy fly-by positions 0, 1, ... without gaps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .buffer import CORNER_TAGS, BufferLibrary, BufferLibraryError, load_library
from .derating import DeratingError, DeratingRegistry, load_table

OPERATIONS = ("read", "write")
BUS_CLASSES = ("data", "address_command", "control", "clock")
DEFAULT_VELOCITY = 1.5e8  # m/s, stripline in FR-4


class ConfigError(ValueError):
    """Invalid interface configuration; ``path`` locates the offending item."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


# --------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ModelTriple:
    driver: str
    receiver: str
    standby: str


@dataclass(frozen=True)
class Component:
    name: str
    kind: str
    models: dict[str, ModelTriple]
    dimm_index: int | None = None
    position_on_flyby: int | None = None


@dataclass(frozen=True)
class Bus:
    name: str
    bus_class: str
    direction: str
    nets: tuple[str, ...]
    selector: str
    lanes: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def bidirectional(self) -> bool:
        return self.direction == "bidirectional"


@dataclass(frozen=True)
class SignalAssociation:
    subject: dict[str, str]  # one of {"bus"}, {"bus", "lane"}, {"net"}
    reference: tuple[str, str]  # (p, n)
    latch_edges: str


@dataclass(frozen=True)
class OdtRule:
    operation: str
    target: str  # DRAM name or "*"
    component: str
    odt: str
    model: str | None = None


@dataclass(frozen=True)
class OdtPolicy:
    rules: tuple[OdtRule, ...] = ()

    def lookup(self, operation: str, target: str, component: str) -> OdtRule | None:
        hit = None
        for r in self.rules:
            if r.operation == operation and r.component == component and r.target in (target, "*"):
                # A rule naming the target explicitly wins over a wildcard.
                if hit is None or r.target != "*":
                    hit = r
        return hit


@dataclass(frozen=True)
class Segment:
    id: str
    a: str
    b: str
    z0: float
    delay: float
    role: str = "trunk"
    length: float | None = None


@dataclass(frozen=True)
class Lumped:
    kind: str  # "R" or "C"
    a: str
    b: str | None
    value: float


@dataclass(frozen=True)
class Termination:
    node: str
    r: float
    v: float


@dataclass(frozen=True)
class NetTopology:
    pins: dict[str, str]  # component -> topology node
    segments: tuple[Segment, ...]
    lumped: tuple[Lumped, ...] = ()
    terminations: tuple[Termination, ...] = ()
    style: str = "p2p"

    def segment(self, seg_id: str) -> Segment:
        for s in self.segments:
            if s.id == seg_id:
                return s
        raise KeyError(seg_id)


@dataclass(frozen=True)
class CouplingPair:
    nets: tuple[str, str]
    segment: str
    k: float
    td_even: float | None = None
    td_odd: float | None = None


@dataclass(frozen=True)
class TopologyGeometry:
    nets: dict[str, NetTopology]
    coupling: tuple[CouplingPair, ...] = ()
    velocity: float = DEFAULT_VELOCITY

    def pairs_for(self, net: str) -> list[CouplingPair]:
        return [p for p in self.coupling if net in p.nets]


@dataclass(frozen=True)
class Thresholds:
    vref: float
    vih_ac: float
    vih_dc: float
    vil_ac: float
    vil_dc: float
    vddq: float = 1.5
    overshoot_limit: float = 0.4
    undershoot_limit: float = 0.4

    def __post_init__(self):
        if not self.vil_ac < self.vil_dc < self.vref < self.vih_dc < self.vih_ac:
            raise ValueError("thresholds must satisfy vil_ac < vil_dc < vref < vih_dc < vih_ac")


@dataclass(frozen=True)
class BaseTiming:
    tck: float
    setup: dict[str, float]  # by bus class
    hold: dict[str, float]
    cas_latency: int = 6
    leveling_step: float = 25e-12

    @property
    def ui(self) -> float:
        return self.tck / 2


@dataclass(frozen=True)
class SimulationSettings:
    bits: int = 32
    prbs_order: int = 7
    dt: float | None = None
    warmup_ui: int = 4
    interpolation: str = "bilinear"


@dataclass(frozen=True)
class Interface:
    components: tuple[Component, ...]
    buses: tuple[Bus, ...]
    associations: tuple[SignalAssociation, ...]
    odt_policy: OdtPolicy
    topology: TopologyGeometry
    thresholds: dict[str, Thresholds]
    timing_base: BaseTiming
    library: BufferLibrary
    derating: DeratingRegistry
    buffers_ref: str
    simulation: SimulationSettings = SimulationSettings()

    # -- lookups -----------------------------------------------------------
    @property
    def controller(self) -> Component:
        return next(c for c in self.components if c.kind == "controller")

    @property
    def drams(self) -> list[Component]:
        """DRAMs in fly-by order: by DIMM, then position on the DIMM."""
        ds = [c for c in self.components if c.kind == "dram"]
        return sorted(ds, key=lambda c: (c.dimm_index or 0, c.position_on_flyby or 0, c.name))

    def component(self, name: str) -> Component:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    def bus_of(self, net: str) -> Bus:
        for b in self.buses:
            if net in b.nets:
                return b
        raise KeyError(net)

    def thresholds_for(self, net_or_class: str) -> Thresholds:
        cls = net_or_class if net_or_class in BUS_CLASSES else self.bus_of(net_or_class).bus_class
        return self.thresholds.get(cls, self.thresholds["data"])

    def reference_nets(self) -> set[str]:
        out = set()
        for a in self.associations:
            out |= set(a.reference)
        return out

    def association_for(self, net: str) -> SignalAssociation | None:
        bus = self.bus_of(net)
        for a in self.associations:
            s = a.subject
            if "net" in s and s["net"] == net:
                return a
            if "lane" in s and s.get("bus") == bus.name and net in bus.lanes.get(s["lane"], ()):
                return a
            if set(s) == {"bus"} and s["bus"] == bus.name:
                return a
        return None

    def nets_on(self, component: str) -> list[str]:
        return [n for b in self.buses for n in b.nets if component in self.topology.nets[n].pins]

    def lane_of(self, net: str) -> str | None:
        bus = self.bus_of(net)
        for lane, nets in bus.lanes.items():
            if net in nets:
                return lane
        return None

    def to_dict(self) -> dict:
        return interface_to_dict(self)


@dataclass(frozen=True)
class Scenario:
    operation: str
    target: str
    corner: str
    drivers: frozenset = frozenset()
    receivers: frozenset = frozenset()
    standby: frozenset = frozenset()

    @property
    def key(self) -> str:
        return f"{self.operation}:{self.target}:{self.corner}"


@dataclass(frozen=True)
class PinRole:
    model: str
    role: str  # driver | receiver | standby
    odt_on: bool = True


# --------------------------------------------------------------------------
# loading


def _schema() -> dict:
    return json.loads(resources.files("ddr3si.data").joinpath("config.schema.json").read_text())


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def load_interface(config: str | Path | dict, base_dir: str | Path | None = None) -> Interface:
    """Parse and validate a config document (path, JSON text or dict)."""
    if isinstance(config, dict):
        doc = config
    else:
        text = str(config)
        if text.lstrip().startswith("{"):
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError("$", f"invalid JSON: {exc}") from None
        else:
            path = Path(config)
            if base_dir is None:
                base_dir = path.parent
            with open(path) as fh:
                try:
                    doc = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ConfigError("$", f"invalid JSON: {exc}") from None
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()

    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(_json_path(e.absolute_path), e.message)

    return _build(doc, base_dir)


def _build(doc: dict, base_dir: Path) -> Interface:
    # components
    comps = []
    names = set()
    for k, c in enumerate(doc["components"]):
        if c["name"] in names:
            raise ConfigError(f"$.components[{k}].name", f"duplicate component {c['name']!r}")
        names.add(c["name"])
        models = {
            sel: ModelTriple(m["driver"], m["receiver"], m["standby"]) for sel, m in c["models"].items()
        }
        comps.append(Component(c["name"], c["kind"], models, c.get("dimm"), c.get("position")))
    ctrl = [c for c in comps if c.kind == "controller"]
    if len(ctrl) > 1:
        raise ConfigError("$.components", f"multiple controllers: {[c.name for c in ctrl]}")
    if not ctrl:
        raise ConfigError("$.components", "no component is tagged controller")
    drams = [c for c in comps if c.kind == "dram"]
    if not drams:
        raise ConfigError("$.components", "at least one DRAM is required")
    by_dimm: dict[int, list[Component]] = {}
    for c in drams:
        by_dimm.setdefault(c.dimm_index or 0, []).append(c)
    for dimm, members in by_dimm.items():
        pos = sorted(c.position_on_flyby if c.position_on_flyby is not None else -1 for c in members)
        if pos != list(range(len(members))):
            raise ConfigError(
                "$.components",
                f"DIMM {dimm}: fly-by positions must be distinct and contiguous from 0, got {pos}",
            )

    # buses
    buses = []
    owner: dict[str, str] = {}
    for k, b in enumerate(doc["buses"]):
        where = f"$.buses[{k}]"
        cls, direction = b["class"], b["direction"]
        want = "bidirectional" if cls == "data" else "unidirectional"
        if direction != want:
            raise ConfigError(f"{where}.direction", f"bus class {cls} must be {want}")
        for j, net in enumerate(b["nets"]):
            if net in owner:
                raise ConfigError(
                    f"{where}.nets[{j}]", f"net {net} already belongs to bus {owner[net]}"
                )
            owner[net] = b["name"]
        lanes = {name: tuple(nets) for name, nets in b.get("lanes", {}).items()}
        if lanes:
            seen = {}
            for lane, nets in lanes.items():
                for net in nets:
                    if net not in b["nets"]:
                        raise ConfigError(f"{where}.lanes.{lane}", f"net {net} is not on bus {b['name']}")
                    if net in seen:
                        raise ConfigError(f"{where}.lanes.{lane}", f"net {net} is also in lane {seen[net]}")
                    seen[net] = lane
            missing = [n for n in b["nets"] if n not in seen]
            if missing:
                raise ConfigError(f"{where}.lanes", f"nets not assigned to a lane: {missing}")
        buses.append(
            Bus(b["name"], cls, direction, tuple(b["nets"]), b.get("selector", b["name"]), lanes)
        )
    bus_by_name = {b.name: b for b in buses}

    # associations
    assocs = []
    covered: dict[str, int] = {}
    for k, a in enumerate(doc["associations"]):
        where = f"$.associations[{k}]"
        subj = a["subject"]
        if "net" in subj:
            if set(subj) != {"net"}:
                raise ConfigError(f"{where}.subject", "a net subject takes no bus or lane")
            if subj["net"] not in owner:
                raise ConfigError(f"{where}.subject.net", f"unknown net {subj['net']!r}")
            nets = [subj["net"]]
            bus = bus_by_name[owner[subj["net"]]]
        elif "bus" in subj:
            if subj["bus"] not in bus_by_name:
                raise ConfigError(f"{where}.subject.bus", f"unknown bus {subj['bus']!r}")
            bus = bus_by_name[subj["bus"]]
            if "lane" in subj:
                if subj["lane"] not in bus.lanes:
                    raise ConfigError(f"{where}.subject.lane", f"bus {bus.name} has no lane {subj['lane']!r}")
                nets = list(bus.lanes[subj["lane"]])
            else:
                nets = list(bus.nets)
        else:
            raise ConfigError(f"{where}.subject", "subject needs a bus or a net")
        ref = (a["reference"]["p"], a["reference"]["n"])
        for part, net in zip("pn", ref):
            if net not in owner:
                raise ConfigError(f"{where}.reference.{part}", f"unknown net {net!r}")
        ref_bus = bus_by_name[owner[ref[0]]]
        if bus.bidirectional:
            if not ref_bus.bidirectional:
                raise ConfigError(f"{where}.reference", "a bidirectional bus must reference a strobe pair")
            edges = a.get("latch_edges", "both")
            if edges != "both":
                raise ConfigError(f"{where}.latch_edges", "strobe-latched data uses both edges")
        else:
            if ref_bus.bus_class != "clock":
                raise ConfigError(f"{where}.reference", "a unidirectional bus must reference a clock pair")
            edges = a.get("latch_edges", "rising")
            if edges == "both":
                raise ConfigError(f"{where}.latch_edges", "clock-latched signals use one edge")
        for net in nets:
            if net in covered:
                raise ConfigError(
                    f"{where}.subject",
                    f"overlapping associations: net {net} also in associations[{covered[net]}]",
                )
            covered[net] = k
        assocs.append(SignalAssociation(dict(subj), ref, edges))
    refs = {n for a in assocs for n in a.reference}
    for b in buses:
        if b.bus_class in ("data", "address_command"):
            for net in b.nets:
                if net not in covered and net not in refs:
                    raise ConfigError("$.associations", f"net {net} has no signal association")

    # library, models
    buffers_ref = doc["buffers_ref"]
    lib_path = Path(buffers_ref)
    if not lib_path.is_absolute():
        lib_path = base_dir / lib_path
    if buffers_ref.startswith("builtin:"):
        lib_path = resources.files("ddr3si.data").joinpath(buffers_ref.split(":", 1)[1] + ".json")
    try:
        library = load_library(lib_path)
    except FileNotFoundError:
        raise ConfigError("$.buffers_ref", f"buffer library not found: {lib_path}") from None
    except BufferLibraryError as exc:
        raise ConfigError("$.buffers_ref", str(exc)) from None

    # topology
    topo_doc = doc["topology"]
    velocity = float(topo_doc.get("velocity", DEFAULT_VELOCITY))
    nets_topo = {}
    for net, t in topo_doc["nets"].items():
        where = f"$.topology.nets.{net}"
        if net not in owner:
            raise ConfigError(where, f"topology for unknown net {net!r}")
        for comp in t["pins"]:
            if comp not in names:
                raise ConfigError(f"{where}.pins.{comp}", f"unknown component {comp!r}")
        segs = []
        seg_ids = set()
        for j, s in enumerate(t["segments"]):
            if s["id"] in seg_ids:
                raise ConfigError(f"{where}.segments[{j}].id", f"duplicate segment id {s['id']!r}")
            seg_ids.add(s["id"])
            if ("delay" in s) == ("length" in s):
                raise ConfigError(f"{where}.segments[{j}]", "give exactly one of delay or length")
            delay = s["delay"] if "delay" in s else s["length"] / velocity
            segs.append(Segment(s["id"], s["from"], s["to"], float(s["z0"]), float(delay),
                                s.get("role", "trunk"), s.get("length")))
        lumped = tuple(Lumped(x["kind"], x["from"], x.get("to"), float(x["value"])) for x in t.get("lumped", []))
        terms = tuple(Termination(x["node"], float(x["r"]), float(x.get("v", 0.0))) for x in t.get("terminations", []))
        nt = NetTopology(dict(t["pins"]), tuple(segs), lumped, terms, t.get("style", "p2p"))
        _check_net_topology(net, nt, where)
        nets_topo[net] = nt
    for net in owner:
        if net not in nets_topo:
            raise ConfigError("$.topology.nets", f"net {net} has no topology")
    comp_by_name = {c.name: c for c in comps}
    for net, nt in nets_topo.items():
        if nt.style == "flyby":
            _check_flyby(net, nt, comp_by_name, f"$.topology.nets.{net}")
        bus = bus_by_name[owner[net]]
        if ctrl[0].name not in nt.pins:
            raise ConfigError(f"$.topology.nets.{net}.pins", "the controller must have a pin on every net")
        for comp in nt.pins:
            c = comp_by_name[comp]
            if bus.selector not in c.models:
                raise ConfigError(
                    f"$.components[{comps.index(c)}].models",
                    f"{comp} has no model assignment for selector {bus.selector!r} (net {net})",
                )
    for k, c in enumerate(comps):
        for sel, m in c.models.items():
            where = f"$.components[{k}].models.{sel}"
            if m.driver not in library.models:
                raise ConfigError(f"{where}.driver", f"driver model {m.driver!r} not in buffer library")
            for role in ("receiver", "standby"):
                name = getattr(m, role)
                if name not in library.odt_models:
                    raise ConfigError(f"{where}.{role}", f"model {name!r} not in buffer library")

    coupling = []
    for k, p in enumerate(topo_doc.get("coupling", [])):
        where = f"$.topology.coupling[{k}]"
        a, b = p["nets"]
        if a == b:
            raise ConfigError(f"{where}.nets", "a net cannot couple to itself")
        for net in (a, b):
            if net not in nets_topo:
                raise ConfigError(f"{where}.nets", f"unknown net {net!r}")
            try:
                nets_topo[net].segment(p["segment"])
            except KeyError:
                raise ConfigError(f"{where}.segment", f"net {net} has no segment {p['segment']!r}") from None
        sa, sb = nets_topo[a].segment(p["segment"]), nets_topo[b].segment(p["segment"])
        if sa.z0 != sb.z0 or abs(sa.delay - sb.delay) > 1e-15:
            raise ConfigError(where, f"asymmetric pair: {a} and {b} differ in z0 or delay on {p['segment']}")
        pair = tuple(sorted((a, b)))
        if any(set(q.nets) == set(pair) and q.segment == p["segment"] for q in coupling):
            raise ConfigError(where, f"pair {pair} declared twice on segment {p['segment']}")
        coupling.append(CouplingPair(pair, p["segment"], float(p["k"]), p.get("td_even"), p.get("td_odd")))

    # ODT policy
    rules = []
    for k, r in enumerate(doc.get("odt_policy", {}).get("rules", [])):
        where = f"$.odt_policy.rules[{k}]"
        if r["component"] not in names:
            raise ConfigError(f"{where}.component", f"unknown component {r['component']!r}")
        target = r.get("target", "*")
        if target != "*" and (target not in names or comp_by_name[target].kind != "dram"):
            raise ConfigError(f"{where}.target", f"target must be a DRAM or '*', got {target!r}")
        comp = comp_by_name[r["component"]]
        drives = (r["operation"] == "write" and comp.kind == "controller") or (
            r["operation"] == "read" and comp.kind == "dram" and target in (comp.name, "*")
        )
        if r["odt"] == "on" and drives and not (comp.kind == "dram" and target == "*"):
            raise ConfigError(where, f"{comp.name} drives during {r['operation']}; its ODT cannot be on")
        if "model" in r and r["model"] not in library.odt_models:
            raise ConfigError(f"{where}.model", f"model {r['model']!r} not in buffer library")
        rules.append(OdtRule(r["operation"], target, r["component"], r["odt"], r.get("model")))

    # thresholds, timing, derating
    thresholds = {}
    for cls, t in doc["thresholds"].items():
        try:
            thresholds[cls] = Thresholds(**t)
        except ValueError as exc:
            raise ConfigError(f"$.thresholds.{cls}", str(exc)) from None
    tb = doc["timing_base"]
    setup = {cls: float(v["setup"]) for cls, v in tb.items() if isinstance(v, dict)}
    hold = {cls: float(v["hold"]) for cls, v in tb.items() if isinstance(v, dict)}
    timing = BaseTiming(float(tb["tck"]), setup, hold, int(tb.get("cas_latency", 6)),
                        float(tb.get("leveling_step", 25e-12)))
    tables, paths = {}, {}
    for k, d in enumerate(doc.get("derating_tables", [])):
        key = (d["bus_class"], d.get("strobe", "differential"))
        try:
            tables[key] = load_table(d["path"], base_dir)
        except (OSError, DeratingError) as exc:
            raise ConfigError(f"$.derating_tables[{k}].path", str(exc)) from None
        paths[key] = d["path"]
    sim_doc = doc.get("simulation", {})
    sim = SimulationSettings(
        bits=int(sim_doc.get("bits", 32)),
        prbs_order=int(sim_doc.get("prbs_order", 7)),
        dt=sim_doc.get("dt"),
        warmup_ui=int(sim_doc.get("warmup_ui", 4)),
        interpolation=sim_doc.get("interpolation", "bilinear"),
    )
    return Interface(
        components=tuple(comps),
        buses=tuple(buses),
        associations=tuple(assocs),
        odt_policy=OdtPolicy(tuple(rules)),
        topology=TopologyGeometry(nets_topo, tuple(coupling), velocity),
        thresholds=thresholds,
        timing_base=timing,
        library=library,
        derating=DeratingRegistry(tables, paths),
        buffers_ref=str(lib_path) if not buffers_ref.startswith("builtin:") else buffers_ref,
        simulation=sim,
    )


def _check_net_topology(net: str, nt: NetTopology, where: str):
    nodes = {s.a for s in nt.segments} | {s.b for s in nt.segments}
    nodes |= {x.a for x in nt.lumped} | {x.b for x in nt.lumped if x.b}
    for comp, node in nt.pins.items():
        if node not in nodes and nt.segments:
            raise ConfigError(f"{where}.pins.{comp}", f"pin node {node!r} is not connected")
    for x in nt.terminations:
        if x.node not in nodes | set(nt.pins.values()):
            raise ConfigError(f"{where}.terminations", f"termination node {x.node!r} is not connected")


def _check_flyby(net, nt: NetTopology, comps: dict[str, Component], where: str):
    """Taps must follow DRAM positions along a single chain, with the
    termination beyond the last tap."""
    adj: dict[str, list[str]] = {}
    for s in nt.segments:
        adj.setdefault(s.a, []).append(s.b)
        adj.setdefault(s.b, []).append(s.a)
    start = next((node for comp, node in nt.pins.items() if comps[comp].kind == "controller"), None)
    # Walk the trunk: at each node prefer the neighbour that is not a dead-end tap stub.
    order, seen = [start], {start}
    dist = {start: 0.0}

    def far(node, prev):
        best = 0
        for nb in adj.get(node, []):
            if nb != prev:
                best = max(best, 1 + far(nb, node))
        return best

    cur, prev = start, None
    while True:
        nxt = [nb for nb in adj.get(cur, []) if nb not in seen]
        if not nxt:
            break
        cur_next = max(nxt, key=lambda nb: far(nb, cur))
        for nb in nxt:
            seen.add(nb)
        prev, cur = cur, cur_next
        order.append(cur)
    # Chain index: a tap on a stub counts at its stub's root on the trunk.
    trunk_index = {node: k for k, node in enumerate(order)}

    def chain_pos(node):
        if node in trunk_index:
            return trunk_index[node]
        for s in nt.segments:
            other = s.b if s.a == node else s.a if s.b == node else None
            if other is not None and other in trunk_index:
                return trunk_index[other] + 0.5
        raise ConfigError(f"{where}", f"tap node {node!r} is not on the fly-by chain")

    taps = sorted(
        ((comps[c].dimm_index or 0, comps[c].position_on_flyby or 0), chain_pos(n))
        for c, n in nt.pins.items()
        if comps[c].kind == "dram"
    )
    positions = [p for _, p in taps]
    if positions != sorted(positions) or len(set(positions)) != len(positions):
        raise ConfigError(where, "fly-by taps are not in DRAM position order along the chain")
    if not nt.terminations:
        raise ConfigError(f"{where}.terminations", "a fly-by net must be terminated after the last tap")
    last = positions[-1] if positions else 0
    if max(chain_pos(t.node) for t in nt.terminations) < last:
        raise ConfigError(f"{where}.terminations", "fly-by termination must sit after the last tap")
    del dist, prev


# --------------------------------------------------------------------------
# scenarios and model resolution


def _in_scope(iface: Interface, operation: str, target: str) -> list[str]:
    out = []
    for b in iface.buses:
        if operation == "read" and not b.bidirectional:
            continue
        for net in b.nets:
            if target in iface.topology.nets[net].pins:
                out.append(net)
    return out


def enumerate_scenarios(
    iface: Interface, operations=OPERATIONS, corners=CORNER_TAGS, targets=None
) -> list[Scenario]:
    """All (operation, target DRAM, corner) combinations in a fixed order:
    operation, then DRAM fly-by order, then slow/typical/fast."""
    out = []
    for op in sorted(operations):
        for dram in iface.drams:
            if targets is not None and dram.name not in targets:
                continue
            nets = [n for n in _in_scope(iface, op, dram.name) if iface.bus_of(n).bidirectional]
            roles = _roles(iface, op, dram.name, nets)
            drv = frozenset(p for p, r in roles.items() if r.role == "driver")
            rcv = frozenset(p for p, r in roles.items() if r.role == "receiver")
            stb = frozenset(p for p, r in roles.items() if r.role == "standby")
            for corner in corners:
                out.append(Scenario(op, dram.name, corner, drv, rcv, stb))
    return out


def scenario_by_key(iface: Interface, key) -> Scenario:
    scen = enumerate_scenarios(iface)
    if isinstance(key, int) or str(key).isdigit():
        return scen[int(key)]
    for s in scen:
        if s.key == key:
            return s
    raise KeyError(f"no scenario {key!r}")


def nets_in_scope(iface: Interface, s: Scenario) -> list[str]:
    return _in_scope(iface, s.operation, s.target)


def _roles(iface: Interface, operation: str, target: str, nets) -> dict[tuple[str, str], PinRole]:
    out = {}
    for net in nets:
        bus = iface.bus_of(net)
        sel = bus.selector
        for comp_name in iface.topology.nets[net].pins:
            comp = iface.component(comp_name)
            triple = comp.models[sel]
            if not bus.bidirectional:
                if operation != "write":
                    raise ValueError(f"net {net} is unidirectional; only write scenarios apply")
                role = "driver" if comp.kind == "controller" else "receiver"
            elif operation == "write":
                role = "driver" if comp.kind == "controller" else "receiver" if comp_name == target else "standby"
            else:
                role = "driver" if comp_name == target else "receiver" if comp.kind == "controller" else "standby"
            if role == "driver":
                out[(comp_name, net)] = PinRole(triple.driver, "driver", False)
                continue
            model = triple.receiver if role == "receiver" else triple.standby
            odt_on = True
            rule = iface.odt_policy.lookup(operation, target, comp_name) if bus.bidirectional else None
            if rule is not None:
                odt_on = rule.odt == "on"
                if rule.model:
                    model = rule.model
            out[(comp_name, net)] = PinRole(model, role, odt_on)
    return out


def resolve_models(iface: Interface, s: Scenario, nets=None) -> dict[tuple[str, str], PinRole]:
    """Role and model for every (component, net) pin of the nets in scope."""
    nets = nets_in_scope(iface, s) if nets is None else list(nets)
    roles = _roles(iface, s.operation, s.target, nets)
    for (comp, net), r in roles.items():
        lib = iface.library
        if r.role == "driver":
            lib.driver(r.model)
        else:
            lib.termination(r.model)
    return roles


# --------------------------------------------------------------------------
# serialization


def interface_to_dict(iface: Interface) -> dict:
    def thr(t: Thresholds):
        return {k: getattr(t, k) for k in ("vref", "vih_ac", "vih_dc", "vil_ac", "vil_dc",
                                           "vddq", "overshoot_limit", "undershoot_limit")}

    comps = []
    for c in iface.components:
        d = {"name": c.name, "kind": c.kind,
             "models": {s: {"driver": m.driver, "receiver": m.receiver, "standby": m.standby}
                        for s, m in c.models.items()}}
        if c.dimm_index is not None:
            d["dimm"] = c.dimm_index
        if c.position_on_flyby is not None:
            d["position"] = c.position_on_flyby
        comps.append(d)
    buses = []
    for b in iface.buses:
        d = {"name": b.name, "class": b.bus_class, "direction": b.direction,
             "selector": b.selector, "nets": list(b.nets)}
        if b.lanes:
            d["lanes"] = {k: list(v) for k, v in b.lanes.items()}
        buses.append(d)
    nets = {}
    for net, t in iface.topology.nets.items():
        nets[net] = {
            "style": t.style,
            "pins": dict(t.pins),
            "segments": [
                {"id": s.id, "from": s.a, "to": s.b, "z0": s.z0, "role": s.role,
                 **({"length": s.length} if s.length is not None else {"delay": s.delay})}
                for s in t.segments
            ],
            "lumped": [{"kind": x.kind, "from": x.a, "to": x.b, "value": x.value} for x in t.lumped],
            "terminations": [{"node": x.node, "r": x.r, "v": x.v} for x in t.terminations],
        }
    coupling = []
    for p in iface.topology.coupling:
        d = {"nets": list(p.nets), "segment": p.segment, "k": p.k}
        if p.td_even is not None:
            d["td_even"] = p.td_even
        if p.td_odd is not None:
            d["td_odd"] = p.td_odd
        coupling.append(d)
    tb = iface.timing_base
    timing = {"tck": tb.tck, "cas_latency": tb.cas_latency, "leveling_step": tb.leveling_step}
    for cls in tb.setup:
        timing[cls] = {"setup": tb.setup[cls], "hold": tb.hold[cls]}
    sim = iface.simulation
    return {
        "components": comps,
        "buses": buses,
        "associations": [
            {"subject": dict(a.subject), "reference": {"p": a.reference[0], "n": a.reference[1]},
             "latch_edges": a.latch_edges}
            for a in iface.associations
        ],
        "odt_policy": {"rules": [
            {"operation": r.operation, "target": r.target, "component": r.component, "odt": r.odt,
             **({"model": r.model} if r.model else {})}
            for r in iface.odt_policy.rules
        ]},
        "topology": {"velocity": iface.topology.velocity, "nets": nets, "coupling": coupling},
        "buffers_ref": iface.buffers_ref,
        "thresholds": {cls: thr(t) for cls, t in iface.thresholds.items()},
        "timing_base": timing,
        "derating_tables": [
            {"bus_class": k[0], "strobe": k[1], "path": str(Path(p).resolve()) if not p.startswith("builtin:") and not Path(p).is_absolute() else p}
            for k, p in iface.derating.paths.items()
        ],
        "simulation": {"bits": sim.bits, "prbs_order": sim.prbs_order, "dt": sim.dt,
                       "warmup_ui": sim.warmup_ui, "interpolation": sim.interpolation},
    }


def save_interface(iface: Interface, path: str | Path):
    with open(path, "w") as fh:
        json.dump(interface_to_dict(iface), fh, indent=2)
        fh.write("\n")
