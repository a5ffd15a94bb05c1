import copy
import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ddr3si import templates  # noqa: E402
from ddr3si.netlist import load_interface  # noqa: E402

EXAMPLES = Path(__file__).resolve().parents[1] / "src" / "ddr3si" / "data" / "examples"


@pytest.fixture(scope="session")
def examples_dir():
    return EXAMPLES


@pytest.fixture(scope="session")
def one_dimm():
    return load_interface(EXAMPLES / "one_dimm.json")


@pytest.fixture(scope="session")
def two_dimm():
    return load_interface(EXAMPLES / "two_dimm.json")


@pytest.fixture
def one_dimm_doc():
    return json.loads((EXAMPLES / "one_dimm.json").read_text())


@pytest.fixture
def two_dimm_doc():
    return json.loads((EXAMPLES / "two_dimm.json").read_text())


def load_doc(doc, base=EXAMPLES):
    return load_interface(copy.deepcopy(doc), base_dir=base)


@pytest.fixture
def small_doc():
    """Controller plus two DRAMs, four data nets per lane, no address bus."""
    return templates.one_dimm_example(n_drams=2, dq_per_lane=4, with_address=False)


# --------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    seen = item.config.stash[_CRITERIA]
    ok = seen.get(n, (title, True))[1]
    if rep.when == "call" or rep.failed:
        ok = ok and rep.passed
        seen[n] = (title, ok)


def pytest_terminal_summary(terminalreporter, config):
    seen = config.stash.get(_CRITERIA, {})
    if not seen:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(seen):
        title, ok = seen[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n:>2}: {title}")
