"""Command-line front end.

Exit codes: 0 pass, 1 violations, 2 run errors, 64 usage error,
65 invalid input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .analysis import LaneGroup, measure_waves, simulate_scenario
from .campaign import (
    EXIT_PASS,
    EXIT_VIOLATIONS,
    JOBS_ENV,
    SweepError,
    default_jobs,
    explore,
    load_sweep,
    make_plan,
    run_campaign,
)
from .derating import DeratingError
from .leveling import LevelingError, dump_report, leveling_report
from .netlist import CORNER_TAGS, OPERATIONS, ConfigError, enumerate_scenarios, load_interface, scenario_by_key

EXIT_USAGE, EXIT_DATA = 64, 65


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ddr3si", description="DDR3 interface signal-integrity verification.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="cmd", metavar="command", parser_class=_Parser)
    sub.required = True

    v = sub.add_parser("validate", help="check a configuration and count its scenarios")
    v.add_argument("config")

    lv = sub.add_parser("level", help="write/read leveling report (JSON)")
    lv.add_argument("config")
    lv.add_argument("--out", help="output file (default: stdout)")

    s = sub.add_parser("simulate", help="simulate one net in one scenario (waveform CSV)")
    s.add_argument("config")
    s.add_argument("--net", required=True)
    s.add_argument("--scenario", required=True, help="scenario index or key, e.g. write:U0:typical")
    s.add_argument("--mode", choices=["reflection", "comprehensive"], default="reflection")
    s.add_argument("--out", default="wave.csv")
    s.add_argument("--bits", type=int, help="data bits after the warm-up")

    m = sub.add_parser("measure", help="timing report and eye plot from a waveform CSV")
    m.add_argument("config")
    m.add_argument("--wave", required=True)
    m.add_argument("--net", required=True)
    m.add_argument("--scenario", help="defaults to the scenario recorded by simulate")
    m.add_argument("--out", help="report JSON path (default: stdout)")
    m.add_argument("--eye", help="eye SVG path (default: next to the waveform)")

    c = sub.add_parser("campaign", help="run every scenario and net")
    c.add_argument("config")
    c.add_argument("--jobs", type=int, help=f"worker processes (default: ${JOBS_ENV} or 1)")
    c.add_argument("--out", default="campaign")
    c.add_argument("--mode", choices=["reflection", "comprehensive"], default="reflection")
    c.add_argument("--operations", nargs="+", choices=OPERATIONS, default=list(OPERATIONS))
    c.add_argument("--corners", nargs="+", choices=CORNER_TAGS, default=list(CORNER_TAGS))
    c.add_argument("--no-leveling", action="store_true")
    c.add_argument("--no-eyes", action="store_true", help="skip the per-net eye SVGs")

    e = sub.add_parser("explore", help="grid sweep of topology parameters")
    e.add_argument("config")
    e.add_argument("--sweep", required=True)
    e.add_argument("--out", default="explore")
    e.add_argument("--jobs", type=int)
    return p


def _load(path):
    return load_interface(Path(path))


def _scenario(iface, key):
    try:
        return scenario_by_key(iface, key)
    except (KeyError, IndexError):
        raise UsageError(f"unknown scenario {key!r}") from None


def _write_or_print(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_validate(a):
    iface = _load(a.config)
    print(f"{len(enumerate_scenarios(iface))} scenarios")
    return EXIT_PASS


def cmd_level(a):
    iface = _load(a.config)
    _write_or_print(dump_report(leveling_report(iface)), a.out)
    return EXIT_PASS


def _group_for(iface, net) -> LaneGroup:
    if net not in iface.topology.nets:
        raise UsageError(f"unknown net {net!r}")
    if net in iface.reference_nets():
        ref = next(x.reference for x in iface.associations if net in x.reference)
        return LaneGroup(ref, ())
    a = iface.association_for(net)
    if a is None:
        raise UsageError(f"net {net!r} has no strobe association")
    return LaneGroup(a.reference, (net,))


def cmd_simulate(a):
    iface = _load(a.config)
    s = _scenario(iface, a.scenario)
    g = _group_for(iface, a.net)
    run = simulate_scenario(iface, s, [g], a.mode, n_bits=None if a.bits is None else a.bits + iface.simulation.warmup_ui)
    waves = None
    for w in run.waves.values():
        waves = w if waves is None else waves.merged(w)
    waves.to_csv(a.out)
    meta = {"scenario": s.key, "net": a.net, "mode": a.mode, "dt_s": run.dt, "t_stop_s": run.t_stop,
            "n_bits": run.plan.n_bits,
            "quantized_delays": {k: list(v) for k, v in sorted(run.quantized.items())}}
    Path(str(a.out) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {a.out} ({waves.n_samples} samples, dt {run.dt:.6g} s)")
    return EXIT_PASS


def cmd_measure(a):
    from .build import default_plan
    from .plotting import eye_svg
    from .waveforms import WaveformSet

    iface = _load(a.config)
    meta_path = Path(str(a.wave) + ".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    key = a.scenario or meta.get("scenario")
    if key is None:
        raise UsageError("no --scenario given and no simulate metadata next to the waveform")
    s = _scenario(iface, key)
    _group_for(iface, a.net)
    try:
        waves = WaveformSet.from_csv(a.wave)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read waveform {a.wave}: {exc}") from None
    plan = default_plan(iface, meta.get("n_bits"))
    try:
        results = measure_waves(iface, s, waves, a.net, plan)
    except KeyError as exc:
        raise UsageError(f"waveform lacks node {exc}") from None
    target = results[-1]
    report = {
        "scenario": s.key,
        "net": a.net,
        "pass": all(r.passed for r in results),
        "results": [r.row() for r in results],
        "edges": [vars(e) for e in target.edges],
        "eye": None if target.eye is None else target.eye.summary(),
    }
    if target.eye is not None:
        eye_path = Path(a.eye) if a.eye else Path(a.wave).with_name(f"{Path(a.wave).stem}_{a.net}_eye.svg")
        eye_svg(target.eye, eye_path, title=f"{a.net} ({s.key})")
        report["eye_svg"] = str(eye_path)
    _write_or_print(json.dumps(report, indent=2, sort_keys=True, default=float) + "\n", a.out)
    return EXIT_PASS if report["pass"] else EXIT_VIOLATIONS


def cmd_campaign(a):
    iface = _load(a.config)
    jobs = default_jobs() if a.jobs is None else a.jobs
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    plan = make_plan(iface, a.mode, tuple(a.operations), tuple(a.corners), leveling=not a.no_leveling)
    rep = run_campaign(iface, plan, jobs)
    rep.write(a.out, eyes=not a.no_eyes)
    sm = rep.summary
    print(f"{sm['verdict']}: {sm['runs']} runs, {sm['violating_runs']} violating, "
          f"{sm['errored_runs']} errors; report in {a.out}")
    return rep.exit_code


def cmd_explore(a):
    iface = _load(a.config)
    try:
        spec = load_sweep(Path(a.sweep))
    except OSError as exc:
        raise UsageError(f"cannot read sweep {a.sweep}: {exc}") from None
    cs = explore(iface, spec, a.jobs)
    cs.write(a.out)
    if cs.no_solution:
        print(f"no passing point in {len(cs.points)}; landscape in {a.out}")
        return EXIT_VIOLATIONS
    print(f"recommended {cs.recommended} (margin {cs.recommended_margin:.4g} s); output in {a.out}")
    return EXIT_PASS


COMMANDS = {"validate": cmd_validate, "level": cmd_level, "simulate": cmd_simulate,
            "measure": cmd_measure, "campaign": cmd_campaign, "explore": cmd_explore}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.cmd](args)
    except UsageError as exc:
        print(f"ddr3si: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, SweepError, DeratingError, LevelingError) as exc:
        print(f"ddr3si: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"ddr3si: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"ddr3si: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
