"""Acceptance criteria, one test (or group) per criterion.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion (see conftest.py).
"""

import time

import numpy as np
import pytest
from conftest import EXAMPLES, load_doc
from oracles import lattice_far, lattice_near, trapezoid_bits

from ddr3si import templates
from ddr3si.build import StimulusPlan, build_circuit, default_plan, stop_time
from ddr3si.campaign import make_plan, run_campaign
from ddr3si.circuit import Circuit
from ddr3si.derating import NotSupportedError, ddr3_data_table, derate_lookup
from ddr3si.eye import eye_diagram
from ddr3si.leveling import (
    FlybySchedule,
    LevelingError,
    check_tdqss,
    compute_read_leveling,
    compute_write_leveling,
)
from ddr3si.netlist import Thresholds, enumerate_scenarios, load_interface, resolve_models, scenario_by_key
from ddr3si.simulate import simulate
from ddr3si.stimulus import prbs_bits
from ddr3si.timing import crossings
from ddr3si.waveforms import Trace

NS, PS = 1e-9, 1e-12
SSTL = Thresholds(0.75, 0.925, 0.85, 0.575, 0.65)


# --------------------------------------------------------------------------
# 1. lattice-diagram oracle


@pytest.mark.criterion(1, "Bergeron vs lattice oracle, 25 random linear circuits, 1 uV, < 10 s")
def test_lattice_oracle_random_circuits():
    rng = np.random.default_rng(2012)
    dt = 10 * PS
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(25):
        rs = float(rng.uniform(5, 150))
        z0 = float(rng.uniform(25, 100))
        rt = None if rng.random() < 0.25 else float(rng.uniform(5, 2000))
        td = int(rng.integers(5, 80)) * dt
        tr = int(rng.integers(1, 30)) * dt
        pts = [(3 * dt, 0.0), (3 * dt + tr, float(rng.uniform(0.5, 1.5)))]
        c = Circuit()
        c.add_source("src", rs, pts)
        c.add_line("T", "src", "far", z0, td)
        if rt is not None:
            c.add_resistor("far", None, rt)
        w = simulate(c, dt, 25 * td)
        worst = max(worst,
                    np.max(np.abs(w.traces["far"] - lattice_far(pts, rs, z0, rt, td, w.times))),
                    np.max(np.abs(w.traces["src"] - lattice_near(pts, rs, z0, rt, td, w.times))))
    elapsed = time.perf_counter() - t0
    print(f"criterion 1: worst error {worst:.3e} V in {elapsed:.2f} s")
    assert worst < 1e-6
    assert elapsed < 10.0


# --------------------------------------------------------------------------
# 2. open stub


@pytest.mark.criterion(2, "open stub steps 2.000 / 1.333 / 1.5 V within 1 mV")
def test_open_stub_reflection():
    dt = 10 * PS
    c = Circuit()
    c.add_source("src", 25.0, [(0.0, 0.0), (dt, 1.5)])
    c.add_line("T", "src", "far", 50.0, 1 * NS)
    w = simulate(c, dt, 60 * NS)
    far = w.traces["far"]
    # Sample just after each arrival (the source edge ends at dt).
    at = lambda t: far[int(round(t / dt)) + 2]  # noqa: E731
    got = (at(1 * NS), at(3 * NS), far[-1])
    print(f"criterion 2: {got[0]:.6f} V, {got[1]:.6f} V, {got[2]:.6f} V")
    assert got == pytest.approx((2.0, 4 / 3, 1.5), abs=1e-3)


# --------------------------------------------------------------------------
# 3. derating table

DQS_AXIS = (4.0, 3.0, 2.0, 1.8, 1.6, 1.4, 1.2, 1.0)
GOLDEN = {
    2.0: ["88:50", "88:50", "88:50", "-", "-", "-", "-", "-"],
    1.5: ["59:34", "59:34", "59:34", "67:42", "-", "-", "-", "-"],
    1.0: ["0:0", "0:0", "0:0", "8:8", "16:16", "-", "-", "-"],
    0.9: ["-", "-2:-4", "-2:-4", "6:4", "14:12", "22:20", "-", "-"],
    0.8: ["-", "-", "-6:-10", "2:-2", "10:6", "18:14", "26:24", "-"],
    0.7: ["-", "-", "-", "-3:-8", "5:0", "13:8", "21:18", "29:34"],
    0.6: ["-", "-", "-", "-", "-1:-10", "7:-2", "15:8", "23:24"],
    0.5: ["-", "-", "-", "-", "-", "-11:-16", "-2:-6", "5:10"],
    0.4: ["-", "-", "-", "-", "-", "-", "-30:-26", "-22:-10"],
}


@pytest.mark.criterion(3, "derating lookup reproduces every supported cell, rejects every dash")
def test_derating_golden_table():
    tab = ddr3_data_table()
    n_ok = n_ns = 0
    for dq, row in GOLDEN.items():
        for dqs, cell in zip(DQS_AXIS, row):
            if cell == "-":
                with pytest.raises(NotSupportedError):
                    derate_lookup(tab, dq, dqs)
                n_ns += 1
            else:
                ds, dh = (int(x) for x in cell.split(":"))
                assert derate_lookup(tab, dq, dqs) == pytest.approx((ds * PS, dh * PS), abs=1e-18)
                n_ok += 1
    assert derate_lookup(tab, 1.0, 2.0) == (0.0, 0.0)
    assert derate_lookup(tab, 2.0, 4.0) == pytest.approx((88 * PS, 50 * PS), abs=1e-18)
    assert derate_lookup(tab, 0.5, 1.0) == pytest.approx((5 * PS, 10 * PS), abs=1e-18)
    print(f"criterion 3: {n_ok} supported cells exact, {n_ns} dash cells rejected")
    assert (n_ok, n_ns) == (36, 36)


# --------------------------------------------------------------------------
# 4. tDQSS


@pytest.mark.criterion(4, "tDQSS limit is exactly 0.25 tCK; boundary passes with margin 0")
def test_tdqss_boundary():
    for tck in (2.5 * NS, 1.875 * NS, 1.25 * NS):
        ok, margin = check_tdqss(0.25 * tck, tck)
        assert ok and margin == 0.0
        ok, margin = check_tdqss(-0.25 * tck, tck)
        assert ok and margin == 0.0
        assert not check_tdqss(np.nextafter(0.25 * tck, 1.0), tck)[0]
        assert check_tdqss(0.0, tck) == (True, 0.25 * tck)


# --------------------------------------------------------------------------
# 5. fly-by leveling


GAP, LEAD, DT5 = 0.4 * NS, 0.8 * NS, 12.5 * PS


def _flyby5():
    doc = templates.one_dimm_example(n_drams=5, dq_per_lane=1)
    drams = [f"U{k}" for k in range(5)]
    for net, t in doc["topology"]["nets"].items():
        if t["style"] == "flyby":
            doc["topology"]["nets"][net] = templates.flyby_net("FPGA", drams, LEAD, GAP)
        else:
            dram = next(p for p in t["pins"] if p != "FPGA")
            # Equal strobe/data lane lengths: flight skew comes from the chain only.
            doc["topology"]["nets"][net] = templates.p2p_net("FPGA", dram, [(LEAD, 50.0)])
    doc["topology"]["coupling"] = [c for c in doc["topology"]["coupling"] if c["segment"] == "lead"]
    doc["simulation"]["dt"] = DT5
    return load_doc(doc)


def _edge_after(p, n, t_min):
    xs = crossings(Trace(p.v - n.v, p.dt, p.t0), 0.0, "rising")
    return float(xs[xs >= t_min][0])


@pytest.mark.criterion(5, "5-tap fly-by (1.6 ns span): post-leveling DQS-CK skew <= step/2 + dt; "
                          "read spread limit 2 CL tCK")
def test_flyby_write_leveling_end_to_end():
    iface = _flyby5()
    tb = iface.timing_base
    s = scenario_by_key(iface, "write:U0:typical")
    plan = default_plan(iface)
    ck = ["CK_P", "CK_N"]
    c = build_circuit(iface, s, ck, "reflection", plan)
    w = simulate(c, DT5, stop_time(iface, plan, ck))
    t_ref = 8 * tb.ui  # past the launch and the first flight
    arrivals = [_edge_after(w.trace(c.pins[("CK_P", d)]), w.trace(c.pins[("CK_N", d)]), t_ref)
                for d in (f"U{k}" for k in range(5))]
    rel = [a - arrivals[0] for a in arrivals]
    routed = sum(seg.delay for seg in iface.topology.nets["CK_P"].segments if seg.id != "lead")
    assert routed == pytest.approx(1.6 * NS, abs=1e-18)
    # The receiver loads slow the chain down a little beyond the routed span.
    assert 1.6 * NS <= rel[-1] < 2.0 * NS
    sched = FlybySchedule(tuple(rel))
    sol = compute_write_leveling(sched, {f"L{k}": k for k in range(5)}, tb.leveling_step, tb.tck)

    skews = []
    for k in range(5):
        d, p, n = f"U{k}", f"DQS{k}_P", f"DQS{k}_N"
        q = sol.lanes[f"L{k}"].quantized
        plan2 = StimulusPlan(plan.n_bits, plan.prbs_order, {p: q, n: q})
        nets = ck + [p, n]
        sk = scenario_by_key(iface, f"write:{d}:typical")
        c2 = build_circuit(iface, sk, nets, "reflection", plan2)
        w2 = simulate(c2, DT5, stop_time(iface, plan2, nets))
        t_ck = _edge_after(w2.trace(c2.pins[("CK_P", d)]), w2.trace(c2.pins[("CK_N", d)]), t_ref)
        t_dqs = _edge_after(w2.trace(c2.pins[(p, d)]), w2.trace(c2.pins[(n, d)]), t_ck - tb.tck / 2)
        skews.append(t_dqs - t_ck)
    rel_skew = [x - skews[0] for x in skews]
    limit = tb.leveling_step / 2 + DT5
    print("criterion 5: arrivals " + ", ".join(f"{x / PS:.1f}" for x in rel)
          + " ps; residual skew " + ", ".join(f"{x / PS:.1f}" for x in rel_skew) + f" ps (limit {limit / PS:.1f})")
    assert all(abs(x) <= limit for x in rel_skew)
    assert all(check_tdqss(x, tb.tck)[0] for x in rel_skew)

    # Without leveling the far tap would be 1.6 ns (> tCK/4) late.
    assert not check_tdqss(rel[-1], tb.tck)[0]


@pytest.mark.criterion(5, "5-tap fly-by (1.6 ns span): post-leveling DQS-CK skew <= step/2 + dt; "
                          "read spread limit 2 CL tCK")
def test_read_spread_limit():
    tb = _base_timing()
    limit = 2 * tb["cas_latency"] * tb["tck"]
    pos = {"a": 0, "b": 1}
    ok = compute_read_leveling(FlybySchedule((0.0, limit)), pos, {}, 25 * PS, tb["tck"], tb["cas_latency"])
    assert ok.spread == limit
    with pytest.raises(LevelingError, match="spread"):
        compute_read_leveling(FlybySchedule((0.0, np.nextafter(limit, 1.0))), pos, {}, 25 * PS,
                              tb["tck"], tb["cas_latency"])


def _base_timing():
    iface = load_interface(EXAMPLES / "one_dimm.json")
    return {"tck": iface.timing_base.tck, "cas_latency": iface.timing_base.cas_latency}


# --------------------------------------------------------------------------
# 6. scenarios and model selection


@pytest.mark.criterion(6, "48 scenarios for 8 DRAMs; write-DRAM1 and read-DRAM2 model rows")
def test_scenarios_and_table_rows(one_dimm, two_dimm):
    assert len(enumerate_scenarios(one_dimm)) == 48
    w = resolve_models(two_dimm, scenario_by_key(two_dimm, "write:DRAM1:typical"))
    r = resolve_models(two_dimm, scenario_by_key(two_dimm, "read:DRAM2:typical"))
    for net in ("DQ0", "DQS0_P"):
        assert (w[("FPGA", net)].model, w[("DRAM1", net)].model, w[("DRAM2", net)].model) == \
            ("DRVR", "RCVR", "ODT_80")
        assert (r[("DRAM2", net)].model, r[("FPGA", net)].model, r[("DRAM1", net)].model) == \
            ("DRVR", "RCVR_240", "ODT_80")


# --------------------------------------------------------------------------
# 7. crosstalk degeneracy


def _pair(ze, zo, dt):
    pts = [(0.1 * NS, 0.0), (0.25 * NS, 1.5)]
    c = Circuit()
    c.add_source("a0", 40.0, pts)
    c.add_resistor("v0", None, 50.0)
    c.add_coupled("P", "a0", "a1", "v0", "v1", ze, zo, 1 * NS, 1 * NS)
    c.add_resistor("a1", None, 60.0)
    c.add_resistor("v1", None, 50.0)
    return simulate(c, dt, 10 * NS), pts


@pytest.mark.criterion(7, "coupled model with equal modes is bit-exact to plain lines; quiet victim "
                          "sees noise otherwise")
def test_crosstalk_degeneracy():
    dt = 10 * PS
    w, pts = _pair(50.0, 50.0, dt)
    ref = Circuit()
    ref.add_source("a0", 40.0, pts)
    ref.add_line("T", "a0", "a1", 50.0, 1 * NS)
    ref.add_resistor("a1", None, 60.0)
    wr = simulate(ref, dt, 10 * NS)
    assert np.array_equal(w.traces["a1"], wr.traces["a1"])
    assert np.array_equal(w.traces["a0"], wr.traces["a0"])
    assert np.all(w.traces["v1"] == 0.0) and np.all(w.traces["v0"] == 0.0)
    wc, _ = _pair(57.0, 44.0, dt)
    noise = float(np.max(np.abs(wc.traces["v0"])))
    print(f"criterion 7: near-end victim noise {noise * 1e3:.2f} mV with k != 0")
    assert noise > 1e-3


# --------------------------------------------------------------------------
# 8. eye geometry


@pytest.mark.criterion(8, "trapezoid PRBS-7 eye width = UI - tr within 2 dt; DC input is closed")
def test_eye_geometry():
    ui, dt = 1.25 * NS, 2 * PS
    bits = prbs_bits(7, 1, 127 + 8)
    t = np.arange(int(round(len(bits) * ui / dt))) * dt
    for tr in (100 * PS, 200 * PS, 375 * PS):
        eye = eye_diagram(Trace(trapezoid_bits(bits, ui, tr, 0.0, 1.5, t), dt), ui, None, SSTL)
        print(f"criterion 8: tr {tr / PS:.0f} ps -> width {eye.width / PS:.2f} ps "
              f"(expected {(ui - tr) / PS:.0f})")
        assert not eye.closed
        assert abs(eye.width - (ui - tr)) <= 2 * dt
    dc = eye_diagram(Trace(np.full(len(t), 0.9), dt), ui, None, SSTL)
    assert dc.closed and dc.width == 0.0


# --------------------------------------------------------------------------
# 9 and 10. full campaign: runtime and determinism


@pytest.fixture(scope="module")
def full_campaign(one_dimm):
    t0 = time.perf_counter()
    rep = run_campaign(one_dimm, make_plan(one_dimm), jobs=1)
    return rep, time.perf_counter() - t0


@pytest.mark.slow
@pytest.mark.criterion(10, "full 8-DRAM campaign (48 scenarios x 9 nets) under 2 minutes")
def test_full_campaign_runtime(full_campaign):
    rep, elapsed = full_campaign
    print(f"criterion 10: {rep.summary['runs']} rows in {elapsed:.1f} s, verdict {rep.summary['verdict']}")
    assert rep.summary["scenarios"] == 48
    assert rep.summary["runs"] == 48 * 9
    assert not rep.errors
    assert elapsed < 120.0


@pytest.mark.slow
@pytest.mark.criterion(9, "repeated campaigns are byte-identical for any jobs count")
def test_campaign_determinism(one_dimm, full_campaign, tmp_path):
    a, _ = full_campaign
    b = run_campaign(one_dimm, make_plan(one_dimm), jobs=2)
    assert a.to_json() == b.to_json()
    assert a.to_csv() == b.to_csv()
    pa, pb = a.write(tmp_path / "a"), b.write(tmp_path / "b")
    assert [p.read_bytes() for p in pa] == [p.read_bytes() for p in pb]
