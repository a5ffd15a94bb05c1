"""JEDEC-style setup/hold slew-rate derating tables.

Tables are indexed by the data slew rate (rows) and the strobe slew rate
(columns), both in V/ns and listed fastest first. Cells hold the
(delta tDS, delta tDH) pair in integer picoseconds, or ``None`` where the
combination is not supported.

CSV layout::

    dqs_slews,4.0,3.0,...
    2.0,88:50,88:50,...,NS
"""

from __future__ import annotations

import bisect
import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

BUILTIN_TABLES = {"ddr3_data_diff": "ddr3_data_diff_derating.csv"}


class DeratingError(ValueError):
    pass


class NotSupportedError(DeratingError):
    """Slew combination falls in a region the table marks as not supported."""


class SlewOutOfRangeError(DeratingError):
    """Slew slower than the slowest table entry."""


Cell = tuple[int, int] | None


@dataclass(frozen=True)
class DeratingTable:
    dq_slew_axis: tuple[float, ...]
    dqs_slew_axis: tuple[float, ...]
    cells: tuple[tuple[Cell, ...], ...]  # [dq row][dqs col]
    name: str = ""

    def __post_init__(self):
        for axis, label in ((self.dq_slew_axis, "dq"), (self.dqs_slew_axis, "dqs")):
            if len(axis) < 1 or any(b >= a for a, b in zip(axis, axis[1:])):
                raise DeratingError(f"{label} slew axis must be strictly descending")
        if len(self.cells) != len(self.dq_slew_axis) or any(
            len(row) != len(self.dqs_slew_axis) for row in self.cells
        ):
            raise DeratingError("derating cell grid is incomplete")

    def cell(self, dq: float, dqs: float) -> Cell:
        return self.cells[self.dq_slew_axis.index(dq)][self.dqs_slew_axis.index(dqs)]

    def supported_cells(self):
        for i, dq in enumerate(self.dq_slew_axis):
            for j, dqs in enumerate(self.dqs_slew_axis):
                if self.cells[i][j] is not None:
                    yield dq, dqs, self.cells[i][j]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dqs_slews", *[_num(x) for x in self.dqs_slew_axis]])
        for dq, row in zip(self.dq_slew_axis, self.cells):
            w.writerow([_num(dq), *["NS" if c is None else f"{c[0]}:{c[1]}" for c in row]])
        return buf.getvalue()


def _num(x: float) -> str:
    return repr(float(x))


def parse_table(text: str, name: str = "") -> DeratingTable:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(x.strip() for x in r)]
    if not rows or rows[0][0].strip() != "dqs_slews":
        raise DeratingError(f"{name or 'table'}: first row must start with 'dqs_slews'")
    dqs = tuple(float(x) for x in rows[0][1:])
    dq, cells = [], []
    for k, r in enumerate(rows[1:], start=2):
        if len(r) != len(dqs) + 1:
            raise DeratingError(f"{name or 'table'} line {k}: expected {len(dqs) + 1} fields")
        dq.append(float(r[0]))
        row = []
        for field in r[1:]:
            field = field.strip()
            if field.upper() == "NS":
                row.append(None)
            else:
                try:
                    ds, dh = field.split(":")
                    row.append((int(ds), int(dh)))
                except ValueError:
                    raise DeratingError(f"{name or 'table'} line {k}: bad cell {field!r}") from None
        cells.append(tuple(row))
    return DeratingTable(tuple(dq), dqs, tuple(cells), name)


def load_table(path: str | Path, base_dir: str | Path | None = None) -> DeratingTable:
    """Load a table from a CSV path or a ``builtin:<name>`` reference."""
    path = str(path)
    if path.startswith("builtin:"):
        key = path.split(":", 1)[1]
        if key not in BUILTIN_TABLES:
            raise DeratingError(f"unknown builtin derating table {key!r}")
        text = resources.files("ddr3si.data").joinpath(BUILTIN_TABLES[key]).read_text()
        return parse_table(text, path)
    p = Path(path)
    if base_dir is not None and not p.is_absolute():
        p = Path(base_dir) / p
    return parse_table(p.read_text(), path)


def ddr3_data_table() -> DeratingTable:
    return load_table("builtin:ddr3_data_diff")


def _bracket(axis: tuple[float, ...], x: float, label: str):
    """Indices (i0, i1) and weight of i1 for a descending axis."""
    if x >= axis[0]:
        return 0, 0, 0.0
    if x < axis[-1]:
        raise SlewOutOfRangeError(
            f"{label} slew {x:.4g} V/ns is below the slowest table entry {axis[-1]:g} V/ns"
        )
    asc = [-a for a in axis]
    k = bisect.bisect_left(asc, -x)
    if axis[k] == x:
        return k, k, 0.0
    i0, i1 = k - 1, k
    frac = (axis[i0] - x) / (axis[i0] - axis[i1])
    return i0, i1, frac


def derate_lookup(
    table: DeratingTable, dq_slew: float, dqs_slew: float, mode: str = "bilinear"
) -> tuple[float, float]:
    """(delta tDS, delta tDH) in seconds for slews given in V/ns.

    Slews faster than the first axis entry clamp to it. Off-grid points
    interpolate bilinearly between the surrounding cells (``mode="nearest"``
    picks the nearest cell instead); any surrounding unsupported cell is an
    error.
    """
    if dq_slew <= 0 or dqs_slew <= 0:
        raise DeratingError("slew rates must be positive")
    i0, i1, fi = _bracket(table.dq_slew_axis, dq_slew, "DQ")
    j0, j1, fj = _bracket(table.dqs_slew_axis, dqs_slew, "DQS")
    if mode == "nearest":
        i0 = i1 if fi > 0.5 else i0
        j0 = j1 if fj > 0.5 else j0
        i1, j1, fi, fj = i0, j0, 0.0, 0.0
    elif mode != "bilinear":
        raise ValueError(f"unknown interpolation mode {mode!r}")
    corners = {(i, j) for i in (i0, i1) for j in (j0, j1)}
    for i, j in corners:
        if table.cells[i][j] is None:
            raise NotSupportedError(
                f"derating not supported at DQ {table.dq_slew_axis[i]:g} V/ns, "
                f"DQS {table.dqs_slew_axis[j]:g} V/ns"
            )
    if len(corners) == 1:
        ds, dh = table.cells[i0][j0]
        return ds / 1e12, dh / 1e12
    out = []
    for k in (0, 1):
        c00 = table.cells[i0][j0][k]
        c01 = table.cells[i0][j1][k]
        c10 = table.cells[i1][j0][k]
        c11 = table.cells[i1][j1][k]
        top = c00 + (c01 - c00) * fj
        bot = c10 + (c11 - c10) * fj
        out.append((top + (bot - top) * fi) / 1e12)
    return out[0], out[1]


@dataclass(frozen=True)
class DeratingRegistry:
    """Tables keyed by (bus class, strobe kind)."""

    tables: dict[tuple[str, str], DeratingTable]
    paths: dict[tuple[str, str], str]

    def get(self, bus_class: str, strobe: str = "differential") -> DeratingTable | None:
        return self.tables.get((bus_class, strobe))
