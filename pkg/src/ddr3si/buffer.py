"""Behavioral I/O buffer library.

Drivers are described by a pull-up and a pull-down V-I curve blended by a
linear switching weight, receivers and stand-by pins by a split (or
Thevenin) termination network. All quantities are SI: volts, amperes,
seconds, ohms, farads.

Sign conventions
----------------
* ``driver_current`` is positive for current flowing *out of* the pad.
* ``odt_current`` is positive for current flowing *into* the termination
  from the pad node.
* The pull-up curve is indexed by the drop ``vddq - v_pad``; the pull-down
  curve by ``v_pad``. Both return the (non-negative, for a sane model)
  current that leg conducts.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CORNER_TAGS = ("slow", "typical", "fast")


class BufferLibraryError(ValueError):
    """Malformed buffer library or unknown model name."""


@dataclass(frozen=True)
class ViCurve:
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.points) < 1:
            raise BufferLibraryError("V-I curve needs at least one point")
        vs = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(vs, vs[1:])):
            raise BufferLibraryError("V-I curve voltages must be strictly increasing")
        object.__setattr__(self, "_v", vs)
        object.__setattr__(self, "_i", [p[1] for p in self.points])

    @classmethod
    def linear(cls, resistance: float, v_max: float = 3.0) -> "ViCurve":
        """Ohmic curve through the origin, handy for tests and templates."""
        return cls(((-v_max, -v_max / resistance), (v_max, v_max / resistance)))

    def __call__(self, v):
        return eval_vi(self, v)

    def value_and_slope(self, v: float) -> tuple[float, float]:
        """Scalar evaluation returning (current, dI/dV)."""
        vs, cs = self._v, self._i
        if v <= vs[0]:
            return cs[0], 0.0
        if v >= vs[-1]:
            return cs[-1], 0.0
        k = bisect.bisect_right(vs, v) - 1
        g = (cs[k + 1] - cs[k]) / (vs[k + 1] - vs[k])
        return cs[k] + g * (v - vs[k]), g

    def scaled(self, factor: float) -> "ViCurve":
        return ViCurve(tuple((v, i * factor) for v, i in self.points))


def eval_vi(curve: ViCurve, v):
    """Piecewise-linear interpolation of ``curve`` at ``v``.

    Values outside the tabulated range are clamped to the end currents.
    Accepts scalars or arrays.
    """
    out = np.interp(v, curve._v, curve._i)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PvtCorner:
    tag: str
    voltage_scale: float = 1.0
    strength_scale: float = 1.0
    ramp_scale: float = 1.0

    def __post_init__(self):
        if self.tag not in CORNER_TAGS:
            raise BufferLibraryError(f"unknown corner tag {self.tag!r}")
        if self.tag == "typical" and (
            self.voltage_scale,
            self.strength_scale,
            self.ramp_scale,
        ) != (1.0, 1.0, 1.0):
            raise BufferLibraryError("typical corner scales must be exactly 1.0")


# Placeholder scales, not vendor data.
DEFAULT_CORNERS = {
    "slow": PvtCorner("slow", 1.0, 0.9, 1.25),
    "typical": PvtCorner("typical"),
    "fast": PvtCorner("fast", 1.0, 1.1, 0.8),
}


@dataclass(frozen=True)
class DriverCorner:
    pullup: ViCurve
    pulldown: ViCurve
    ramp_rise: float
    ramp_fall: float
    c_comp: float


@dataclass(frozen=True)
class BufferModel:
    """Push-pull driver. ``corners`` holds per-corner curve data; the
    corner's scale factors are applied on top at evaluation time."""

    name: str
    vddq: float
    corners: dict[str, DriverCorner]

    def __post_init__(self):
        missing = [c for c in CORNER_TAGS if c not in self.corners]
        if missing:
            raise BufferLibraryError(f"model {self.name}: missing corners {missing}")
        for tag, data in self.corners.items():
            if data.ramp_rise <= 0 or data.ramp_fall <= 0:
                raise BufferLibraryError(f"model {self.name}/{tag}: ramps must be > 0")
            # The pull-down must sink current for small positive pad voltage.
            if data.pulldown.value_and_slope(0.05)[0] < 0:
                raise BufferLibraryError(f"model {self.name}/{tag}: pulldown sources current near 0 V")

    def corner(self, tag: str) -> DriverCorner:
        return self.corners[tag]


@dataclass(frozen=True)
class OdtModel:
    """Receiver / stand-by termination.

    ``rtt_effective`` of ``None`` is an unterminated input (capacitance
    only). ``network`` is ``"split"`` (2*rtt to vddq and 2*rtt to ground)
    or ``"thevenin"`` (rtt to ``vtt``).
    """

    name: str
    rtt_effective: float | None
    c_comp: float
    vddq: float = 1.5
    network: str = "split"
    vtt: float | None = None
    corner_scale: dict[str, float] = field(
        default_factory=lambda: {"slow": 1.0, "typical": 1.0, "fast": 1.0}
    )

    def __post_init__(self):
        if self.network not in ("split", "thevenin"):
            raise BufferLibraryError(f"ODT model {self.name}: unknown network {self.network!r}")
        if self.rtt_effective is not None and self.rtt_effective <= 0:
            raise BufferLibraryError(f"ODT model {self.name}: rtt must be positive")
        for tag in CORNER_TAGS:
            self.corner_scale.setdefault(tag, 1.0)

    @property
    def terminated(self) -> bool:
        return self.rtt_effective is not None

    def legs(self, corner: PvtCorner | str, enabled: bool = True) -> list[tuple[float, float]]:
        """Termination as a list of (resistance, rail voltage) legs."""
        if not enabled or self.rtt_effective is None:
            return []
        tag = corner if isinstance(corner, str) else corner.tag
        vscale = 1.0 if isinstance(corner, str) else corner.voltage_scale
        r = self.rtt_effective * self.corner_scale[tag]
        vddq = self.vddq * vscale
        if self.network == "thevenin":
            return [(r, vddq / 2 if self.vtt is None else self.vtt)]
        return [(2 * r, vddq), (2 * r, 0.0)]


def switching_weights(t_since_edge: float, ramp: float, direction: str) -> tuple[float, float]:
    """Pull-up / pull-down weights ``t_since_edge`` seconds after an edge."""
    frac = min(max(t_since_edge / ramp, 0.0), 1.0)
    w_up = frac if direction == "rise" else 1.0 - frac
    return w_up, 1.0 - w_up


def driver_current(
    m: BufferModel, corner: PvtCorner, w_up: float, w_dn: float, v_pad: float
) -> float:
    data = m.corner(corner.tag)
    vddq = m.vddq * corner.voltage_scale
    i_up, _ = data.pullup.value_and_slope(vddq - v_pad)
    i_dn, _ = data.pulldown.value_and_slope(v_pad)
    return corner.strength_scale * (w_up * i_up - w_dn * i_dn)


def odt_current(m: OdtModel, corner: PvtCorner, v_pad: float, enabled: bool = True) -> float:
    return sum((v_pad - rail) / r for r, rail in m.legs(corner, enabled))


@dataclass(frozen=True)
class BufferLibrary:
    models: dict[str, BufferModel]
    odt_models: dict[str, OdtModel]
    pvt_corners: dict[str, PvtCorner] = field(default_factory=lambda: dict(DEFAULT_CORNERS))

    def driver(self, name: str) -> BufferModel:
        try:
            return self.models[name]
        except KeyError:
            raise BufferLibraryError(f"driver model {name!r} not in buffer library") from None

    def termination(self, name: str) -> OdtModel:
        try:
            return self.odt_models[name]
        except KeyError:
            raise BufferLibraryError(f"receiver/ODT model {name!r} not in buffer library") from None

    def to_dict(self) -> dict:
        def curve(c):
            return [list(p) for p in c.points]

        return {
            "models": [
                {
                    "name": m.name,
                    "vddq": m.vddq,
                    "corners": {
                        tag: {
                            "pullup": curve(d.pullup),
                            "pulldown": curve(d.pulldown),
                            "ramp_rise": d.ramp_rise,
                            "ramp_fall": d.ramp_fall,
                            "c_comp": d.c_comp,
                        }
                        for tag, d in m.corners.items()
                    },
                }
                for m in self.models.values()
            ],
            "odt_models": [
                {
                    "name": o.name,
                    "rtt_effective": o.rtt_effective,
                    "c_comp": o.c_comp,
                    "vddq": o.vddq,
                    "network": o.network,
                    "vtt": o.vtt,
                    "corner_scale": dict(o.corner_scale),
                }
                for o in self.odt_models.values()
            ],
            "pvt_corners": [
                {
                    "tag": c.tag,
                    "voltage_scale": c.voltage_scale,
                    "strength_scale": c.strength_scale,
                    "ramp_scale": c.ramp_scale,
                }
                for c in self.pvt_corners.values()
            ],
        }


def _driver_corner(d: dict, where: str) -> DriverCorner:
    try:
        return DriverCorner(
            pullup=ViCurve(tuple((float(v), float(i)) for v, i in d["pullup"])),
            pulldown=ViCurve(tuple((float(v), float(i)) for v, i in d["pulldown"])),
            ramp_rise=float(d["ramp_rise"]),
            ramp_fall=float(d["ramp_fall"]),
            c_comp=float(d.get("c_comp", 0.0)),
        )
    except KeyError as exc:
        raise BufferLibraryError(f"{where}: missing field {exc.args[0]!r}") from None


def library_from_dict(doc: dict) -> BufferLibrary:
    unknown = set(doc) - {"models", "odt_models", "pvt_corners"}
    if unknown:
        raise BufferLibraryError(f"buffer library: unknown keys {sorted(unknown)}")
    models = {}
    for k, m in enumerate(doc.get("models", [])):
        where = f"models[{k}]"
        corners_doc = m.get("corners", {})
        if "typical" not in corners_doc:
            raise BufferLibraryError(f"{where}: a 'typical' corner is required")
        corners = {tag: _driver_corner(c, f"{where}.corners.{tag}") for tag, c in corners_doc.items()}
        # Omitted corners reuse the typical curves; the corner scales still apply.
        for tag in CORNER_TAGS:
            corners.setdefault(tag, corners["typical"])
        models[m["name"]] = BufferModel(m["name"], float(m.get("vddq", 1.5)), corners)
    odts = {}
    for o in doc.get("odt_models", []):
        rtt = o.get("rtt_effective")
        odts[o["name"]] = OdtModel(
            name=o["name"],
            rtt_effective=None if rtt is None else float(rtt),
            c_comp=float(o.get("c_comp", 0.0)),
            vddq=float(o.get("vddq", 1.5)),
            network=o.get("network", "split"),
            vtt=o.get("vtt"),
            corner_scale=dict(o.get("corner_scale", {})),
        )
    dup = set(models) & set(odts)
    if dup:
        raise BufferLibraryError(f"model names used twice: {sorted(dup)}")
    corners = dict(DEFAULT_CORNERS)
    for c in doc.get("pvt_corners", []):
        corners[c["tag"]] = PvtCorner(
            c["tag"],
            float(c.get("voltage_scale", 1.0)),
            float(c.get("strength_scale", 1.0)),
            float(c.get("ramp_scale", 1.0)),
        )
    s, f = corners["slow"], corners["fast"]
    if not s.strength_scale <= 1.0 <= f.strength_scale:
        raise BufferLibraryError("corner strength scales must satisfy slow <= 1 <= fast")
    return BufferLibrary(models, odts, corners)


def load_library(path: str | Path) -> BufferLibrary:
    with open(path) as fh:
        return library_from_dict(json.load(fh))
