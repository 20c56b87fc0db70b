"""Result tables in the published layouts, as markdown and CSV.

A grid maps ``group -> row -> column -> cell``. Groups are blocks that get
their own Average row (outdoor and indoor scenes, say). A cell is an
:class:`EvalReport`, a ``(position_m, orientation_deg)`` pair whose entries
may be ``None``, or absent; anything missing prints as ``-``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .evaluate import EvalReport, improvement_percent, truncate

LAYOUTS = {
    "run": {"columns": ["Median error"], "improvement": None, "caption": "Single experiment"},
    "table1": {"columns": ["Centered Crop", "Whole Field of View"],
               "improvement": ("Centered Crop", "Whole Field of View"),
               "caption": "Effect of the whole field of view on localization accuracy"},
    "table2": {"columns": ["Baseline", "Baseline-Augmented", "Whole view-Augmented"],
               "improvement": ("Baseline", "Whole view-Augmented"),
               "caption": "Effect of rotation augmentation on localization accuracy"},
    "table3": {"columns": ["Baseline", "Length 1", "Length 5", "Length 10", "Length 20"],
               "improvement": None,
               "caption": "Localization accuracy with LSTM heads"},
    "table4": {"columns": ["Baseline", "Length 1", "Length 5", "Length 10", "Length 20"],
               "improvement": None,
               "caption": "Localization accuracy with LSTM heads and the whole field of view"},
    "table5": {"columns": ["PoseNet", "Spatial LSTMs", "VidLoc", "PoseNet Adaptive Loss", "Combined"],
               "improvement": None,
               "caption": "Whole field of view + augmentation + LSTM"},
}

IMPROVEMENT = "Improvement"
AVERAGE = "Average"


def _pair(cell) -> tuple:
    if cell is None:
        return None, None
    if isinstance(cell, EvalReport):
        return cell.median_position, cell.median_orientation
    p, o = cell
    return (None if p is None else float(p)), (None if o is None else float(o))


@dataclass
class Table:
    layout: str
    rounding: str
    columns: list
    rows: list = field(default_factory=list)   # (group, row name, {column: (pos, ori)}) incl. Average rows
    markdown: str = ""
    csv: str = ""

    def cell(self, row: str, column: str, group: Optional[str] = None) -> tuple:
        for g, name, cells in self.rows:
            if name == row and (group is None or g == group):
                return cells.get(column, (None, None))
        raise KeyError(row)


def _mean_or_none(values: list) -> Optional[float]:
    if not values or any(v is None for v in values):
        return None
    return float(np.mean(values))


def emit_table(grid: dict, layout: str = "table1", rounding: str = "truncate") -> Table:
    """Build the table for ``layout``.

    Averages are the arithmetic means of the per-row medians and exist only
    when every row of the group has a value. Improvement cells come from the
    two value columns the layout names, and the Improvement average is the
    mean of the per-row improvements. ``rounding`` ("truncate" or "round")
    controls every displayed number and is stated under the table; the CSV
    keeps full precision.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; choose from {sorted(LAYOUTS)}")
    if rounding not in ("truncate", "round"):
        raise ValueError(f"rounding must be 'truncate' or 'round', got {rounding!r}")
    layout_def = LAYOUTS[layout]
    cols = list(layout_def["columns"])
    imp = layout_def["improvement"]
    if not grid:
        raise ValueError("empty grid")
    if not isinstance(next(iter(grid.values())), dict) or not all(
            isinstance(v, dict) for r in grid.values() for v in r.values()):
        grid = {"": grid}
    for rows in grid.values():
        for name, cells in rows.items():
            unknown = set(cells) - set(cols)
            if unknown:
                raise ValueError(f"row {name!r}: columns {sorted(unknown)} are not in {layout}")

    out_cols = cols + ([IMPROVEMENT] if imp else [])
    table = Table(layout, rounding, out_cols)
    for group, rows in grid.items():
        block = []
        for name, cells in rows.items():
            vals = {c: _pair(cells.get(c)) for c in cols}
            if imp:
                vals[IMPROVEMENT] = _improvement(vals[imp[0]], vals[imp[1]], rounding)
            block.append((group, name, vals))
        table.rows.extend(block)
        if len(block) > 1:
            avg = {}
            for c in out_cols:
                avg[c] = tuple(_mean_or_none([b[2][c][k] for b in block]) for k in (0, 1))
            table.rows.append((group, AVERAGE, avg))
    table.markdown = _markdown(table, layout_def["caption"])
    table.csv = _csv(table)
    return table


def _improvement(base: tuple, new: tuple, rounding: str) -> tuple:
    out = []
    for b, n in zip(base, new):
        out.append(None if b is None or n is None or b <= 0 else improvement_percent(b, n, rounding))
    return tuple(out)


def _fmt(v: Optional[float], unit: str, rounding: str, decimals: int) -> str:
    if v is None:
        return "-"
    v = truncate(v, decimals) if rounding == "truncate" else round(v, decimals)
    return f"{v + 0.0:.{decimals}f}{unit}"


def _fmt_cell(column: str, pair: tuple, rounding: str) -> str:
    if column == IMPROVEMENT:
        return f"{_fmt(pair[0], '%', rounding, 1)}, {_fmt(pair[1], '%', rounding, 1)}"
    return f"{_fmt(pair[0], 'm', rounding, 2)}, {_fmt(pair[1], '°', rounding, 2)}"


def _markdown(table: Table, caption: str) -> str:
    lines = ["| Dataset | " + " | ".join(table.columns) + " |",
             "|---" * (len(table.columns) + 1) + "|"]
    group = None
    for g, name, cells in table.rows:
        if group is not None and g != group:
            lines.append("|" + " |" * (len(table.columns) + 1))
        group = g
        label = f"**{name}**" if name == AVERAGE else name
        lines.append(f"| {label} | " + " | ".join(_fmt_cell(c, cells[c], table.rounding)
                                                   for c in table.columns) + " |")
    lines.append("")
    lines.append(f"{caption}. Medians per row; rounding: {table.rounding}.")
    return "\n".join(lines) + "\n"


def _csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "row", "column", "position", "orientation"])
    for g, name, cells in table.rows:
        for c in table.columns:
            p, o = cells[c]
            w.writerow([g, name, c, "" if p is None else repr(p), "" if o is None else repr(o)])
    return buf.getvalue()
