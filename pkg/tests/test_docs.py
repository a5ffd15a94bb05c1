import json
from importlib import resources
from pathlib import Path

import jsonschema
from conftest import EXAMPLES

from ddr3si.campaign import SWEEP_SCHEMA, load_sweep
from ddr3si.templates import sweep_example

DOCS = Path(__file__).resolve().parents[1] / "docs"


def test_config_schema_copy_in_sync():
    packaged = json.loads(resources.files("ddr3si.data").joinpath("config.schema.json").read_text())
    assert json.loads((DOCS / "config.schema.json").read_text()) == packaged


def test_sweep_schema_copy_in_sync():
    assert json.loads((DOCS / "sweep.schema.json").read_text()) == SWEEP_SCHEMA


def test_examples_validate():
    schema = json.loads((DOCS / "config.schema.json").read_text())
    for name in ("one_dimm.json", "two_dimm.json"):
        jsonschema.validate(json.loads((EXAMPLES / name).read_text()), schema)
    doc = json.loads((EXAMPLES / "sweep.json").read_text())
    jsonschema.validate(doc, SWEEP_SCHEMA)
    assert doc == json.loads(json.dumps(sweep_example()))
    assert load_sweep(EXAMPLES / "sweep.json").size == 15
