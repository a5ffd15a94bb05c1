import json
import shutil
import subprocess
import sys

import pytest
from conftest import EXAMPLES

from ddr3si import __version__, templates
from ddr3si.cli import main


@pytest.fixture
def cfg(tmp_path):
    """Small interface written next to a copy of the buffer library."""
    shutil.copy(EXAMPLES / "buffers.json", tmp_path / "buffers.json")
    p = tmp_path / "small.json"
    p.write_text(json.dumps(templates.one_dimm_example(n_drams=2, dq_per_lane=4, with_address=False)))
    return p


def test_validate_shipped_example(capsys):
    assert main(["validate", str(EXAMPLES / "one_dimm.json")]) == 0
    assert capsys.readouterr().out.strip() == "48 scenarios"


def test_level(cfg, tmp_path):
    out = tmp_path / "lvl.json"
    assert main(["level", str(cfg), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert set(doc["write"]["lanes"]) == {"L0", "L1"}


def test_simulate_then_measure(cfg, tmp_path, capsys):
    wave = tmp_path / "w.csv"
    assert main(["simulate", str(cfg), "--net", "DQ1", "--scenario", "write:U0:typical",
                 "--out", str(wave)]) == 0
    meta = json.loads((tmp_path / "w.csv.json").read_text())
    assert meta["scenario"] == "write:U0:typical" and meta["net"] == "DQ1"
    rep = tmp_path / "m.json"
    eye = tmp_path / "eye.svg"
    assert main(["measure", str(cfg), "--wave", str(wave), "--net", "DQ1",
                 "--out", str(rep), "--eye", str(eye)]) == 0
    doc = json.loads(rep.read_text())
    assert doc["pass"] is True and doc["scenario"] == "write:U0:typical"
    assert eye.read_text().lstrip().startswith("<?xml")


def test_campaign_identical_across_jobs(cfg, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    args = [str(cfg), "--corners", "typical"]
    assert main(["campaign", *args, "--jobs", "1", "--out", str(a)]) == 0
    assert main(["campaign", *args, "--jobs", "2", "--out", str(b)]) == 0
    for name in ("report.json", "report.csv", "eyes/DQ0.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert capsys.readouterr().out.startswith("pass:")


def test_campaign_violation_exit(tmp_path):
    shutil.copy(EXAMPLES / "buffers.json", tmp_path / "buffers.json")
    doc = templates.one_dimm_example(n_drams=2, dq_per_lane=4, with_address=False)
    for c in doc["components"][1:]:
        c["models"]["DQ"]["receiver"] = "RCVR"
    p = tmp_path / "open.json"
    p.write_text(json.dumps(doc))
    assert main(["campaign", str(p), "--operations", "write", "--corners", "fast",
                 "--no-eyes", "--out", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o" / "eyes").exists()


def test_explore(cfg, tmp_path):
    sweep = tmp_path / "sweep.json"
    sweep.write_text(json.dumps({
        "parameters": [{"name": "stub", "bind": {"nets": "*", "segment": "s2", "field": "delay"},
                        "values": [0.3125e-9]}],
        "scenarios": {"operations": ["write"], "corners": ["typical"], "targets": ["U0"]},
    }))
    out = tmp_path / "ex"
    assert main(["explore", str(cfg), "--sweep", str(sweep), "--out", str(out)]) == 0
    assert json.loads((out / "constraints.json").read_text())["recommended"] == {"stub": 0.3125e-9}


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["frobnicate"])
    assert ei.value.code == 64
    with pytest.raises(SystemExit) as ei:
        main(["simulate", "x.json"])
    assert ei.value.code == 64


def test_bad_scenario_is_usage_error(cfg, tmp_path):
    assert main(["simulate", str(cfg), "--net", "DQ1", "--scenario", "write:U9:typical",
                 "--out", str(tmp_path / "w.csv")]) == 64


def test_data_errors(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "missing.json")]) == 65
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(["validate", str(bad)]) == 65
    assert "invalid" in capsys.readouterr().err


def test_version_entry_point():
    r = subprocess.run([sys.executable, "-m", "ddr3si.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0
    assert r.stdout.strip() == f"ddr3si {__version__}"
