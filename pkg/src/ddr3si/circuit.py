"""Simulatable element graph.

A :class:`Circuit` is a flat list of named nodes plus elements that attach
to them. Ground is spelled ``None`` (or ``"0"``) wherever a node is
expected. Elements are plain frozen dataclasses; the engine in
:mod:`ddr3si.simulate` compiles them into matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .buffer import BufferModel, PvtCorner
from .stimulus import Stimulus

GROUND_NAMES = (None, "0", "gnd")


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class Line:
    name: str
    a: str
    b: str
    z0: float
    td: float

    def __post_init__(self):
        if self.z0 <= 0 or self.td <= 0:
            raise CircuitError(f"line {self.name}: z0 and td must be > 0")


@dataclass(frozen=True)
class CoupledLine:
    """Symmetric coupled pair: conductor 1 runs a1-b1, conductor 2 a2-b2."""

    name: str
    a1: str
    b1: str
    a2: str
    b2: str
    z0_even: float
    z0_odd: float
    td_even: float
    td_odd: float

    def __post_init__(self):
        if not self.z0_even >= self.z0_odd > 0:
            raise CircuitError(f"coupled line {self.name}: need z0_even >= z0_odd > 0")
        if self.td_even <= 0 or self.td_odd <= 0:
            raise CircuitError(f"coupled line {self.name}: modal delays must be > 0")

    @property
    def degenerate(self) -> bool:
        return self.z0_even == self.z0_odd and self.td_even == self.td_odd


@dataclass(frozen=True)
class Resistor:
    """Resistor between ``a`` and ``b``; with ``b`` grounded it may tie to a
    rail of ``v`` volts (a Thevenin termination)."""

    a: str
    b: str | None
    r: float
    v: float = 0.0

    def __post_init__(self):
        if self.r < 0:
            raise CircuitError("resistance must be >= 0")
        if self.r == 0 and self.b in GROUND_NAMES:
            raise CircuitError("zero-ohm resistor to a rail is not supported")


@dataclass(frozen=True)
class Capacitor:
    a: str
    b: str | None
    c: float


@dataclass(frozen=True)
class VoltageSource:
    """Ideal piecewise-linear source behind a series resistance ``r``.

    ``points`` are (time, volts); repeated times encode jumps, and the
    waveform holds its first value for all earlier times.
    """

    node: str
    r: float
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.r <= 0:
            raise CircuitError("source resistance must be > 0")


@dataclass(frozen=True)
class Driver:
    node: str
    model: BufferModel
    corner: PvtCorner
    stimulus: Stimulus
    name: str = ""


@dataclass
class Circuit:
    nodes: list[str] = field(default_factory=list)
    lines: list[Line] = field(default_factory=list)
    coupled: list[CoupledLine] = field(default_factory=list)
    resistors: list[Resistor] = field(default_factory=list)
    capacitors: list[Capacitor] = field(default_factory=list)
    sources: list[VoltageSource] = field(default_factory=list)
    drivers: list[Driver] = field(default_factory=list)
    # (net, component) -> node of that pin
    pins: dict[tuple[str, str], str] = field(default_factory=dict)
    roles: dict[tuple[str, str], tuple[str, str]] = field(default_factory=dict)
    victim: str | None = None
    aggressors: list[str] = field(default_factory=list)
    vddq: float = 1.5

    def node(self, name: str | None) -> str | None:
        if name in GROUND_NAMES:
            return None
        if name not in self._index:
            self._index[name] = len(self.nodes)
            self.nodes.append(name)
        return name

    def __post_init__(self):
        self._index = {n: k for k, n in enumerate(self.nodes)}

    def add_line(self, name, a, b, z0, td):
        self.lines.append(Line(name, self.node(a), self.node(b), z0, td))

    def add_coupled(self, name, a1, b1, a2, b2, z0_even, z0_odd, td_even, td_odd):
        cl = CoupledLine(
            name, self.node(a1), self.node(b1), self.node(a2), self.node(b2),
            z0_even, z0_odd, td_even, td_odd,
        )
        if cl.degenerate:
            # Identical modes decouple exactly; keep two plain lines.
            self.lines.append(Line(name + ".1", cl.a1, cl.b1, z0_even, td_even))
            self.lines.append(Line(name + ".2", cl.a2, cl.b2, z0_even, td_even))
        else:
            self.coupled.append(cl)

    def add_resistor(self, a, b, r, v=0.0):
        self.resistors.append(Resistor(self.node(a), self.node(b), r, v))

    def add_capacitor(self, a, b, c):
        if c > 0:
            self.capacitors.append(Capacitor(self.node(a), self.node(b), c))

    def add_source(self, node, r, points):
        self.sources.append(VoltageSource(self.node(node), r, tuple(points)))

    def add_driver(self, node, model, corner, stimulus, name=""):
        self.drivers.append(Driver(self.node(node), model, corner, stimulus, name))

    def element_count(self) -> dict[str, int]:
        return {
            "lines": len(self.lines),
            "coupled": len(self.coupled),
            "resistors": len(self.resistors),
            "capacitors": len(self.capacitors),
            "sources": len(self.sources),
            "drivers": len(self.drivers),
        }

    def check(self):
        touched = set()
        for ln in self.lines:
            touched |= {ln.a, ln.b}
        for cl in self.coupled:
            touched |= {cl.a1, cl.b1, cl.a2, cl.b2}
        for el in self.resistors + self.capacitors:
            touched |= {el.a, el.b}
        touched |= {s.node for s in self.sources}
        touched |= {d.node for d in self.drivers}
        bare = [n for n in self.nodes if n not in touched]
        if bare:
            raise CircuitError(f"nodes without elements: {bare}")
