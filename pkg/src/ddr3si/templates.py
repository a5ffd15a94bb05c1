"""Topology templates and example interface documents.

The builders return plain config dicts (the JSON form accepted by
:func:`ddr3si.netlist.load_interface`), so they double as generators for
the example files shipped in ``ddr3si/data``.
"""

from __future__ import annotations

DDR3_800_TCK = 2.5e-9
STEP = DDR3_800_TCK / 2 / 64  # one default simulation step at DDR3-800

SSTL15 = {
    "vref": 0.75, "vih_ac": 0.925, "vih_dc": 0.85, "vil_ac": 0.575, "vil_dc": 0.65,
    "vddq": 1.5, "overshoot_limit": 0.4, "undershoot_limit": 0.4,
}

# Base setup/hold at DDR3-800 with AC175/DC100 levels.
DDR3_800_TIMING = {
    "tck": DDR3_800_TCK,
    "cas_latency": 6,
    "leveling_step": 25e-12,
    "data": {"setup": 75e-12, "hold": 150e-12},
    "address_command": {"setup": 200e-12, "hold": 275e-12},
}


def _driver(name, r_on, ramp, c_comp=1.0e-12):
    """Push-pull driver whose curves compress mildly above about 1 V."""
    pts = [(-1.5, -1.5 / r_on), (0.0, 0.0), (0.5, 0.5 / r_on), (1.0, 1.0 / r_on),
           (1.5, 1.42 / r_on), (3.0, 2.2 / r_on)]
    curve = [[v, i] for v, i in pts]
    return {
        "name": name,
        "vddq": 1.5,
        "corners": {"typical": {"pullup": curve, "pulldown": curve,
                                "ramp_rise": ramp, "ramp_fall": ramp, "c_comp": c_comp}},
    }


def _odt(name, rtt, c_comp=1.2e-12):
    return {"name": name, "rtt_effective": rtt, "c_comp": c_comp, "vddq": 1.5, "network": "split"}


def buffer_library() -> dict:
    """Generic DDR3-like buffers: 34 ohm driver, unterminated and ODT inputs."""
    return {
        "models": [_driver("DRVR", 34.0, 0.5e-9), _driver("DRVR_40", 40.0, 0.5e-9)],
        "odt_models": [
            _odt("RCVR", None),
            _odt("RCVR_60", 60.0),
            _odt("RCVR_240", 240.0),
            _odt("ODT_40", 40.0),
            _odt("ODT_60", 60.0),
            _odt("ODT_80", 80.0),
            _odt("ODT_120", 120.0),
        ],
    }


# --------------------------------------------------------------------------
# net templates


def p2p_net(ctrl, dram, segments, via_c=0.0):
    """Controller to one DRAM through ``segments`` = [(delay, z0), ...]."""
    nodes = ["c"] + [f"n{k}" for k in range(1, len(segments))] + ["d"]
    segs = [
        {"id": f"s{k}", "from": nodes[k], "to": nodes[k + 1], "z0": z0, "delay": td}
        for k, (td, z0) in enumerate(segments)
    ]
    net = {"style": "p2p", "pins": {ctrl: "c", dram: "d"}, "segments": segs}
    if via_c and len(segments) > 1:
        net["lumped"] = [{"kind": "C", "from": "n1", "to": None, "value": via_c}]
    return net


def flyby_net(ctrl, drams, lead, spacing, z0=50.0, z_dimm=60.0, term_r=39.0, vtt=0.75):
    """Daisy chain: ``lead`` delay to the first tap, then ``spacing`` between
    taps (a float or one delay per gap); terminated after the last tap."""
    gaps = [spacing] * (len(drams) - 1) if isinstance(spacing, (int, float)) else list(spacing)
    segs = [{"id": "lead", "from": "c", "to": "t0", "z0": z0, "delay": lead, "role": "trunk"}]
    for k, td in enumerate(gaps):
        segs.append({"id": f"g{k}", "from": f"t{k}", "to": f"t{k + 1}", "z0": z_dimm,
                     "delay": td, "role": "tap"})
    last = f"t{len(drams) - 1}"
    return {
        "style": "flyby",
        "pins": {ctrl: "c", **{d: f"t{k}" for k, d in enumerate(drams)}},
        "segments": segs,
        "terminations": [{"node": last, "r": term_r, "v": vtt}],
    }


def t_branch_net(ctrl, drams, trunk, stub, z0=50.0, z_stub=60.0):
    """Balanced T: one trunk to a branch point, one equal stub per DRAM."""
    segs = [{"id": "trunk", "from": "c", "to": "br", "z0": z0, "delay": trunk, "role": "trunk"}]
    pins = {ctrl: "c"}
    for k, d in enumerate(drams):
        segs.append({"id": f"stub{k}", "from": "br", "to": f"d{k}", "z0": z_stub,
                     "delay": stub, "role": "stub"})
        pins[d] = f"d{k}"
    return {"style": "t_branch", "pins": pins, "segments": segs}


def thresholds() -> dict:
    return {"data": dict(SSTL15), "address_command": dict(SSTL15), "clock": dict(SSTL15)}


# --------------------------------------------------------------------------
# example interfaces


def one_dimm_example(n_drams: int = 8, dq_per_lane: int = 8, with_address: bool = True,
                     buffers_ref: str = "buffers.json") -> dict:
    """Controller plus one DIMM of ``n_drams`` x8 devices: one byte lane and
    strobe pair per DRAM, fly-by clock and address."""
    ctrl = "FPGA"
    drams = [f"U{k}" for k in range(n_drams)]
    dq_models = {"driver": "DRVR", "receiver": "RCVR_60", "standby": "RCVR_60"}
    dram_models = {"driver": "DRVR", "receiver": "ODT_60", "standby": "ODT_60"}
    ca_models = {"driver": "DRVR_40", "receiver": "RCVR", "standby": "RCVR"}
    components = [{"name": ctrl, "kind": "controller", "models": {"DQ": dq_models, "CA": ca_models}}]
    for k, d in enumerate(drams):
        components.append({"name": d, "kind": "dram", "dimm": 0, "position": k,
                           "models": {"DQ": dram_models, "CA": ca_models}})
    dq_nets, lanes, strobes, nets, assocs = [], {}, [], {}, []
    for k, d in enumerate(drams):
        lane = [f"DQ{k * dq_per_lane + j}" for j in range(dq_per_lane)]
        lanes[f"L{k}"] = lane
        dq_nets += lane
        p, n = f"DQS{k}_P", f"DQS{k}_N"
        strobes += [p, n]
        # Lane trace lengths differ a little; all delays are whole steps.
        segs = [(16 * STEP, 50.0), ((32 + 2 * k) * STEP, 50.0), (16 * STEP, 60.0)]
        for net in lane + [p, n]:
            nets[net] = p2p_net(ctrl, d, segs, via_c=0.3e-12)
        assocs.append({"subject": {"bus": "DATA", "lane": f"L{k}"}, "reference": {"p": p, "n": n},
                       "latch_edges": "both"})
    buses = [
        {"name": "DATA", "class": "data", "direction": "bidirectional", "selector": "DQ",
         "nets": dq_nets, "lanes": lanes},
        {"name": "DQS", "class": "data", "direction": "bidirectional", "selector": "DQ", "nets": strobes},
    ]
    if with_address:
        ca = ["A0", "A1", "BA0", "RAS_N"]
        ck = ["CK_P", "CK_N"]
        buses += [
            {"name": "ADDR", "class": "address_command", "direction": "unidirectional",
             "selector": "CA", "nets": ca},
            {"name": "CLK", "class": "clock", "direction": "unidirectional", "selector": "CA", "nets": ck},
        ]
        for net in ca + ck:
            nets[net] = flyby_net(ctrl, drams, 40 * STEP, 16 * STEP)
        assocs.append({"subject": {"bus": "ADDR"}, "reference": {"p": "CK_P", "n": "CK_N"},
                       "latch_edges": "rising"})
        coupling = [{"nets": ["A0", "A1"], "segment": "lead", "k": 0.1}]
    else:
        coupling = []
    for a, b in (("DQ0", "DQ1"), ("DQ1", "DQ2")):
        if a in nets and b in nets:
            coupling.append({"nets": [a, b], "segment": "s1", "k": 0.12})
    return {
        "components": components,
        "buses": buses,
        "associations": assocs,
        "odt_policy": {"rules": []},
        "topology": {"velocity": 1.5e8, "nets": nets, "coupling": coupling},
        "buffers_ref": buffers_ref,
        "thresholds": thresholds(),
        "timing_base": dict(DDR3_800_TIMING),
        "derating_tables": [{"bus_class": "data", "strobe": "differential", "path": "builtin:ddr3_data_diff"}],
        "simulation": {"bits": 32, "prbs_order": 7, "warmup_ui": 4, "interpolation": "bilinear"},
    }


def two_dimm_example(buffers_ref: str = "buffers.json") -> dict:
    """Two single-device DIMMs on a shared byte lane with the model
    assignments of the usual two-module configuration."""
    ctrl = "FPGA"
    components = [
        {"name": ctrl, "kind": "controller",
         "models": {"DQ": {"driver": "DRVR", "receiver": "RCVR_240", "standby": "RCVR_240"}}},
        {"name": "DRAM1", "kind": "dram", "dimm": 0, "position": 0,
         "models": {"DQ": {"driver": "DRVR", "receiver": "RCVR", "standby": "ODT_80"}}},
        {"name": "DRAM2", "kind": "dram", "dimm": 1, "position": 0,
         "models": {"DQ": {"driver": "DRVR", "receiver": "RCVR", "standby": "ODT_80"}}},
    ]
    dq = [f"DQ{k}" for k in range(8)]
    strobes = ["DQS0_P", "DQS0_N"]

    def slot_net():
        return {
            "style": "t_branch",
            "pins": {ctrl: "c", "DRAM1": "d1", "DRAM2": "d2"},
            "segments": [
                {"id": "mb", "from": "c", "to": "s1", "z0": 50.0, "delay": 48 * STEP, "role": "trunk"},
                {"id": "slots", "from": "s1", "to": "s2", "z0": 50.0, "delay": 16 * STEP, "role": "trunk"},
                {"id": "stub1", "from": "s1", "to": "d1", "z0": 60.0, "delay": 16 * STEP, "role": "stub"},
                {"id": "stub2", "from": "s2", "to": "d2", "z0": 60.0, "delay": 16 * STEP, "role": "stub"},
            ],
        }

    return {
        "components": components,
        "buses": [
            {"name": "DATA", "class": "data", "direction": "bidirectional", "selector": "DQ",
             "nets": dq, "lanes": {"L0": dq}},
            {"name": "DQS", "class": "data", "direction": "bidirectional", "selector": "DQ", "nets": strobes},
        ],
        "associations": [{"subject": {"bus": "DATA", "lane": "L0"},
                          "reference": {"p": "DQS0_P", "n": "DQS0_N"}, "latch_edges": "both"}],
        "odt_policy": {"rules": []},
        "topology": {"nets": {n: slot_net() for n in dq + strobes},
                     "coupling": [{"nets": ["DQ0", "DQ1"], "segment": "mb", "k": 0.15}]},
        "buffers_ref": buffers_ref,
        "thresholds": {"data": dict(SSTL15)},
        "timing_base": dict(DDR3_800_TIMING),
        "derating_tables": [{"bus_class": "data", "strobe": "differential", "path": "builtin:ddr3_data_diff"}],
        "simulation": {"bits": 32, "prbs_order": 7, "warmup_ui": 4},
    }


def sweep_example() -> dict:
    """Stub-length and coupling sweep for :func:`two_dimm_example`."""
    return {
        "parameters": [
            {"name": "stub_delay", "bind": {"nets": "*", "segment": "stub2", "field": "delay"},
             "values": [8 * STEP, 16 * STEP, 32 * STEP, 48 * STEP, 64 * STEP]},
            {"name": "coupling_k", "bind": {"coupling": 0, "field": "k"}, "values": [0.0, 0.15, 0.3]},
        ],
        "scenarios": {"corners": ["typical"]},
        "analysis": "comprehensive",
        "nets": ["DQS0_P", "DQS0_N", "DQ0", "DQ1"],
        "max_points": 10000,
    }
