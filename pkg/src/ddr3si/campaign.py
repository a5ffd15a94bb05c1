"""Verification campaigns and solution-space sweeps.

A campaign runs every scenario of a plan, measures every lane, and folds
the per-run rows into per-net worst cases. Runs are independent; they may
execute in worker processes, but results are always merged in plan order
so reports do not depend on scheduling.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema

from .analysis import NetResult, run_scenario
from .leveling import leveling_report
from .netlist import CORNER_TAGS, OPERATIONS, Interface, Scenario, enumerate_scenarios

JOBS_ENV = "DDR3SI_JOBS"

EXIT_PASS, EXIT_VIOLATIONS, EXIT_ERRORS = 0, 1, 2


def default_jobs() -> int:
    v = os.environ.get(JOBS_ENV)
    if v:
        try:
            return max(int(v), 1)
        except ValueError:
            raise ValueError(f"{JOBS_ENV} must be an integer, got {v!r}") from None
    return 1


@dataclass(frozen=True)
class CampaignPlan:
    scenarios: tuple[Scenario, ...]
    nets: tuple[str, ...] | None = None  # None: every net in scope
    analysis: str = "reflection"
    comprehensive_nets: frozenset = frozenset()  # per-net override in reflection plans
    n_bits: int | None = None
    leveling: bool = True
    dt: float | None = None

    def __post_init__(self):
        if self.analysis not in ("reflection", "comprehensive"):
            raise ValueError(f"unknown analysis mode {self.analysis!r}")
        if not self.scenarios:
            raise ValueError("plan has no scenarios")

    def mode_for(self, net: str) -> str:
        return "comprehensive" if net in self.comprehensive_nets else self.analysis


def make_plan(iface: Interface, analysis: str = "reflection", operations=OPERATIONS,
              corners=CORNER_TAGS, targets=None, nets=None, **kw) -> CampaignPlan:
    scen = tuple(enumerate_scenarios(iface, operations, corners, targets))
    return CampaignPlan(scen, None if nets is None else tuple(nets), analysis, **kw)


@dataclass
class CampaignReport:
    rows: list[dict]
    nets: list[dict]
    violations: list[dict]
    errors: list[dict]
    summary: dict
    leveling: dict = field(default_factory=dict)
    eyes: dict = field(default_factory=dict)  # net -> EyeDiagram of its worst run

    @property
    def exit_code(self) -> int:
        if self.errors:
            return EXIT_ERRORS
        return EXIT_VIOLATIONS if self.violations else EXIT_PASS

    def to_dict(self) -> dict:
        return {"summary": self.summary, "nets": self.nets, "violations": self.violations,
                "errors": self.errors, "leveling": self.leveling, "runs": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        return rows_csv(self.rows)

    def write(self, out_dir: str | Path, eyes: bool = True) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json", out / "report.csv"]
        paths[0].write_text(self.to_json())
        paths[1].write_text(self.to_csv())
        if eyes and self.eyes:
            from .plotting import eye_svg

            eye_dir = out / "eyes"
            eye_dir.mkdir(exist_ok=True)
            for net, (key, eye) in sorted(self.eyes.items()):
                p = eye_dir / f"{net}.svg"
                eye_svg(eye, p, title=f"{net} ({key})")
                paths.append(p)
        return paths


def rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0])
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _csv_cell(r[k]) for k in cols})
    return buf.getvalue()


def _csv_cell(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return x


# --------------------------------------------------------------------------
# task execution

_WORKER_IFACE: Interface | None = None


def _init_worker(iface: Interface):
    global _WORKER_IFACE
    _WORKER_IFACE = iface


def _run_task(args):
    idx, plan = args
    return _execute(_WORKER_IFACE, plan, idx)


def _execute(iface: Interface, plan: CampaignPlan, idx: int):
    """Rows and eyes for scenario ``idx``; failures become error rows."""
    s = plan.scenarios[idx]
    try:
        results = _scenario_results(iface, plan, s)
    except Exception as exc:  # noqa: BLE001 - every failure is reported per run
        return [_error_row(s, f"{type(exc).__name__}: {exc}")], {}
    rows, eyes = [], {}
    for r in results:
        rows.append(r.row())
        if r.eye is not None:
            eyes[r.net] = r.eye
    return rows, eyes


def _scenario_results(iface, plan, s) -> list[NetResult]:
    kw = dict(leveling=plan.leveling, n_bits=plan.n_bits, dt=plan.dt)
    if not plan.comprehensive_nets or plan.analysis == "comprehensive":
        return run_scenario(iface, s, plan.analysis, nets=plan.nets, **kw)
    # Mixed plan: comprehensive nets rerun with their aggressors.
    base = run_scenario(iface, s, "reflection", nets=plan.nets, **kw)
    extra = {r.net: r for r in run_scenario(iface, s, "comprehensive", nets=plan.nets, **kw)
             if r.net in plan.comprehensive_nets}
    return [extra.get(r.net, r) for r in base]


def _error_row(s: Scenario, msg: str) -> dict:
    return {"scenario": s.key, "operation": s.operation, "target": s.target, "corner": s.corner,
            "net": "*", "kind": "error", "receiver": "", "status": "error", "pass": False,
            "error": msg}


def run_campaign(iface: Interface, plan: CampaignPlan, jobs: int | None = None) -> CampaignReport:
    """Execute every scenario of ``plan`` and aggregate worst cases."""
    jobs = default_jobs() if jobs is None else max(int(jobs), 1)
    n = len(plan.scenarios)
    if jobs == 1 or n == 1:
        outputs = [_execute(iface, plan, i) for i in range(n)]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, n), initializer=_init_worker,
                                 initargs=(iface,)) as ex:
            outputs = list(ex.map(_run_task, [(i, plan) for i in range(n)]))
    return _aggregate(iface, plan, outputs)


def _aggregate(iface, plan, outputs) -> CampaignReport:
    cols = None
    rows, errors = [], []
    for rs, _ in outputs:
        for r in rs:
            if r["status"] == "error":
                errors.append({"scenario": r["scenario"], "net": r["net"], "error": r["error"]})
            else:
                cols = cols or list(r)
            rows.append(r)
    if cols:
        rows = [r if r["status"] != "error" else {c: r.get(c) for c in cols} for r in rows]

    per_net: dict[str, dict] = {}
    worst_key: dict[str, tuple] = {}
    eyes = {}
    for (rs, ey), s in zip(outputs, plan.scenarios):
        for r in rs:
            if r["status"] == "error":
                continue
            net = r["net"]
            agg = per_net.setdefault(net, {
                "net": net, "kind": r["kind"], "runs": 0, "failed_runs": 0,
                "worst_setup_margin_s": None, "worst_setup_scenario": None,
                "worst_hold_margin_s": None, "worst_hold_scenario": None,
                "min_eye_width_s": None, "min_eye_height_v": None,
                "worst_overshoot_v": 0.0, "worst_undershoot_v": 0.0, "pass": True,
            })
            agg["runs"] += 1
            if not r["pass"]:
                agg["failed_runs"] += 1
                agg["pass"] = False
            for k, sk in (("setup", "worst_setup"), ("hold", "worst_hold")):
                m = r[f"{k}_margin_s"]
                if m is not None and (agg[f"{sk}_margin_s"] is None or m < agg[f"{sk}_margin_s"]):
                    agg[f"{sk}_margin_s"] = m
                    agg[f"{sk}_scenario"] = r["scenario"]
            for k, src in (("min_eye_width_s", "eye_width_s"), ("min_eye_height_v", "eye_height_v")):
                if r[src] is not None and (agg[k] is None or r[src] < agg[k]):
                    agg[k] = r[src]
            for k, src in (("worst_overshoot_v", "overshoot_v"), ("worst_undershoot_v", "undershoot_v")):
                if r[src] is not None:
                    agg[k] = max(agg[k], r[src])
            m = _row_margin(r)
            if net in ey and (net not in worst_key or m < worst_key[net][0]):
                worst_key[net] = (m, r["scenario"])
                eyes[net] = (r["scenario"], ey[net])

    violations = []
    for r in rows:
        if r["status"] == "error" or r["pass"]:
            continue
        violations.append({"scenario": r["scenario"], "net": r["net"], "reasons": _reasons(iface, r)})
    nets = [per_net[k] for k in per_net]
    summary = {
        "scenarios": len(plan.scenarios),
        "runs": len(rows),
        "analysis": plan.analysis,
        "leveling": plan.leveling,
        "passed_runs": sum(1 for r in rows if r["status"] == "ok" and r["pass"]),
        "violating_runs": len(violations),
        "errored_runs": len(errors),
        "violating_nets": sorted({v["net"] for v in violations}),
        "worst_setup_margin_s": _min_of(n["worst_setup_margin_s"] for n in nets),
        "worst_hold_margin_s": _min_of(n["worst_hold_margin_s"] for n in nets),
        "worst_overshoot_v": max((n["worst_overshoot_v"] for n in nets), default=0.0),
        "worst_undershoot_v": max((n["worst_undershoot_v"] for n in nets), default=0.0),
    }
    summary["verdict"] = "error" if errors else "fail" if violations else "pass"
    return CampaignReport(rows, nets, violations, errors, summary, leveling_report(iface), eyes)


def _min_of(xs):
    xs = [x for x in xs if x is not None]
    return min(xs) if xs else None


def _row_margin(r) -> float:
    ms = [m for m in (r.get("setup_margin_s"), r.get("hold_margin_s")) if m is not None]
    return min(ms) if ms else math.inf


def _reasons(iface, r) -> list[str]:
    thr = iface.thresholds_for("data")
    out = []
    if r["setup_margin_s"] is not None and r["setup_margin_s"] < 0:
        out.append("setup")
    if r["hold_margin_s"] is not None and r["hold_margin_s"] < 0:
        out.append("hold")
    if r["overshoot_v"] is not None and r["overshoot_v"] > thr.overshoot_limit:
        out.append("overshoot")
    if r["undershoot_v"] is not None and r["undershoot_v"] > thr.undershoot_limit:
        out.append("undershoot")
    if r.get("eye_closed"):
        out.append("eye closed")
    if not out:
        out.append(r["notes"] or "unmeasurable")
    return out


# --------------------------------------------------------------------------
# solution-space exploration

SWEEP_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["parameters"],
    "additionalProperties": False,
    "properties": {
        "parameters": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "bind"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "bind": {
                        "oneOf": [
                            {"type": "object", "additionalProperties": False,
                             "required": ["segment", "field"],
                             "properties": {
                                 "nets": {"oneOf": [{"const": "*"},
                                                    {"type": "array", "items": {"type": "string"},
                                                     "minItems": 1}]},
                                 "segment": {"type": "string"},
                                 "field": {"enum": ["delay", "length", "z0"]}}},
                            {"type": "object", "additionalProperties": False,
                             "required": ["coupling", "field"],
                             "properties": {
                                 "coupling": {"type": "integer", "minimum": 0},
                                 "field": {"enum": ["k", "td_even", "td_odd"]}}},
                        ]
                    },
                    "values": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                    "range": {"type": "object", "required": ["start", "stop", "step"],
                              "additionalProperties": False,
                              "properties": {"start": {"type": "number"}, "stop": {"type": "number"},
                                             "step": {"type": "number", "exclusiveMinimum": 0}}},
                },
                "oneOf": [{"required": ["values"]}, {"required": ["range"]}],
            },
        },
        "scenarios": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "operations": {"type": "array", "items": {"enum": list(OPERATIONS)}, "minItems": 1},
                "corners": {"type": "array", "items": {"enum": list(CORNER_TAGS)}, "minItems": 1},
                "targets": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            },
        },
        "analysis": {"enum": ["reflection", "comprehensive"]},
        "nets": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "max_points": {"type": "integer", "minimum": 1},
        "bits": {"type": "integer", "minimum": 8},
    },
}


class SweepError(ValueError):
    pass


@dataclass(frozen=True)
class Parameter:
    name: str
    bind: dict
    values: tuple[float, ...]


@dataclass(frozen=True)
class SweepSpec:
    parameters: tuple[Parameter, ...]
    operations: tuple[str, ...] = OPERATIONS
    corners: tuple[str, ...] = CORNER_TAGS
    targets: tuple[str, ...] | None = None
    analysis: str = "reflection"
    nets: tuple[str, ...] | None = None
    max_points: int = 10_000
    bits: int | None = None

    @property
    def size(self) -> int:
        return math.prod(len(p.values) for p in self.parameters)


def load_sweep(src) -> SweepSpec:
    """SweepSpec from a path, JSON text or dict."""
    if isinstance(src, dict):
        doc = src
    else:
        text = Path(src).read_text() if not str(src).lstrip().startswith("{") else str(src)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SweepError(f"sweep is not valid JSON: {exc}") from None
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(SWEEP_SCHEMA).iter_errors(doc))
    if err is not None:
        where = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        raise SweepError(f"{where}: {err.message}")
    params = []
    for p in doc["parameters"]:
        if "values" in p:
            vals = tuple(float(v) for v in p["values"])
        else:
            r = p["range"]
            n = int(math.floor((r["stop"] - r["start"]) / r["step"] + 1e-9)) + 1
            if n < 1:
                raise SweepError(f"parameter {p['name']}: empty range")
            vals = tuple(float(r["start"] + i * r["step"]) for i in range(n))
        if len(set(vals)) != len(vals):
            raise SweepError(f"parameter {p['name']}: duplicate values")
        params.append(Parameter(p["name"], dict(p["bind"]), vals))
    if len({p.name for p in params}) != len(params):
        raise SweepError("parameter names must be unique")
    sc = doc.get("scenarios", {})
    spec = SweepSpec(
        tuple(params),
        tuple(sc.get("operations", OPERATIONS)),
        tuple(sc.get("corners", CORNER_TAGS)),
        tuple(sc["targets"]) if "targets" in sc else None,
        doc.get("analysis", "reflection"),
        tuple(doc["nets"]) if "nets" in doc else None,
        int(doc.get("max_points", 10_000)),
        doc.get("bits"),
    )
    if spec.size > spec.max_points:
        raise SweepError(f"grid has {spec.size} points, above the cap of {spec.max_points}")
    return spec


def apply_parameters(iface: Interface, params, values) -> Interface:
    """Copy of ``iface`` with each bound topology field set."""
    topo = iface.topology
    nets = dict(topo.nets)
    coupling = list(topo.coupling)
    for p, v in zip(params, values):
        b = p.bind
        if "coupling" in b:
            i = b["coupling"]
            if i >= len(coupling):
                raise SweepError(f"parameter {p.name}: no coupling entry {i}")
            if b["field"] == "k" and not 0 <= v < 1:
                raise SweepError(f"parameter {p.name}: k must be in [0, 1), got {v}")
            if b["field"] != "k" and v <= 0:
                raise SweepError(f"parameter {p.name}: {b['field']} must be > 0")
            coupling[i] = replace(coupling[i], **{b["field"]: float(v)})
            continue
        targets = sorted(nets) if b.get("nets", "*") == "*" else list(b["nets"])
        hit = False
        for net in targets:
            if net not in nets:
                raise SweepError(f"parameter {p.name}: unknown net {net}")
            t = nets[net]
            segs = list(t.segments)
            for k, s in enumerate(segs):
                if s.id != b["segment"]:
                    continue
                hit = True
                if b["field"] == "z0":
                    if v <= 0:
                        raise SweepError(f"parameter {p.name}: z0 must be > 0")
                    segs[k] = replace(s, z0=float(v))
                else:
                    if v <= 0:
                        raise SweepError(f"parameter {p.name}: {b['field']} must be > 0")
                    d = float(v) if b["field"] == "delay" else float(v) / topo.velocity
                    segs[k] = replace(s, delay=d, length=None if b["field"] == "delay" else float(v))
            nets[net] = replace(t, segments=tuple(segs))
        if not hit:
            raise SweepError(f"parameter {p.name}: no segment {b['segment']!r} on the bound nets")
    return replace(iface, topology=replace(topo, nets=nets, coupling=tuple(coupling)))


@dataclass
class ConstraintSet:
    parameters: list[str]
    grid: dict[str, list[float]]
    points: list[dict]  # landscape rows
    recommended: dict[str, float] | None
    recommended_margin: float | None
    intervals: dict[str, list[tuple[float, float]]]
    no_solution: bool

    def to_dict(self) -> dict:
        passing = [p for p in self.points if p["pass"]]
        margins = [p["min_margin_s"] for p in self.points if p["min_margin_s"] is not None]
        return {
            "parameters": self.parameters,
            "grid": self.grid,
            "recommended": self.recommended,
            "recommended_margin_s": self.recommended_margin,
            "passing_intervals": {k: [list(iv) for iv in v] for k, v in self.intervals.items()},
            "no_solution": self.no_solution,
            "landscape": {
                "points": len(self.points),
                "passing_points": len(passing),
                "min_margin_s": min(margins) if margins else None,
                "max_margin_s": max(margins) if margins else None,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def landscape_csv(self) -> str:
        return rows_csv(self.points)

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        a, b = out / "constraints.json", out / "landscape.csv"
        a.write_text(self.to_json())
        b.write_text(self.landscape_csv())
        return [a, b]


def evaluate_point(iface: Interface, spec: SweepSpec, values, jobs: int = 1) -> dict:
    """Landscape row for one grid point."""
    pi = apply_parameters(iface, spec.parameters, values)
    plan = make_plan(pi, spec.analysis, spec.operations, spec.corners, spec.targets, spec.nets,
                     n_bits=spec.bits)
    rep = run_campaign(pi, plan, jobs=jobs)
    data = [r for r in rep.rows if r["status"] == "ok" and r["kind"] == "data"]
    sm = _min_of(r["setup_margin_s"] for r in data)
    hm = _min_of(r["hold_margin_s"] for r in data)
    mm = _min_of([sm, hm])
    row = {p.name: float(v) for p, v in zip(spec.parameters, values)}
    row.update({
        "min_setup_margin_s": sm,
        "min_hold_margin_s": hm,
        "min_margin_s": mm,
        "worst_overshoot_v": rep.summary["worst_overshoot_v"],
        "worst_undershoot_v": rep.summary["worst_undershoot_v"],
        "runs": len(rep.rows),
        "errors": len(rep.errors),
        "pass": bool(rep.exit_code == EXIT_PASS and data),
    })
    return row


def explore(iface: Interface, spec: SweepSpec, jobs: int | None = None) -> ConstraintSet:
    """Evaluate the full grid and derive passing intervals.

    The recommended point maximises the minimum derated margin over the
    passing points (over all points when none pass); ties go to the
    lexicographically smallest parameter vector. Intervals are slices of
    the grid through the recommended point, one parameter at a time.
    """
    jobs = default_jobs() if jobs is None else max(int(jobs), 1)
    if spec.size > spec.max_points:
        raise SweepError(f"grid has {spec.size} points, above the cap of {spec.max_points}")
    grid = list(itertools.product(*[p.values for p in spec.parameters]))
    for p in spec.parameters:  # fail fast on bad bindings
        apply_parameters(iface, [p], [p.values[0]])
    if jobs == 1 or len(grid) == 1:
        points = [evaluate_point(iface, spec, v) for v in grid]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(grid)), initializer=_init_worker,
                                 initargs=(iface,)) as ex:
            points = list(ex.map(_eval_task, [(spec, v) for v in grid]))
    names = [p.name for p in spec.parameters]
    passing = [i for i, p in enumerate(points) if p["pass"]]
    pool = passing or [i for i, p in enumerate(points) if p["min_margin_s"] is not None]
    rec = rec_margin = None
    intervals: dict[str, list[tuple[float, float]]] = {n: [] for n in names}
    if pool:
        # Highest margin first; among equals the smallest vector.
        best = min(pool, key=lambda i: (-points[i]["min_margin_s"], tuple(grid[i])))
        rec = dict(zip(names, map(float, grid[best])))
        rec_margin = points[best]["min_margin_s"]
        index = {tuple(g): i for i, g in enumerate(grid)}
        for j, p in enumerate(spec.parameters):
            ordered = sorted(p.values)
            flags = []
            for v in ordered:
                g = list(grid[best])
                g[j] = v
                flags.append(points[index[tuple(g)]]["pass"])
            intervals[p.name] = _runs(ordered, flags)
    return ConstraintSet(names, {p.name: list(p.values) for p in spec.parameters}, points, rec,
                         rec_margin, intervals, not passing)


def _eval_task(args):
    spec, values = args
    return evaluate_point(_WORKER_IFACE, spec, values)


def _runs(values, flags) -> list[tuple[float, float]]:
    """Contiguous passing runs of a sorted grid as closed intervals."""
    out, start = [], None
    for v, f in zip(values, flags):
        if f and start is None:
            start = v
        if f:
            end = v
        if not f and start is not None:
            out.append((start, end))
            start = None
    if start is not None:
        out.append((start, end))
    return out
