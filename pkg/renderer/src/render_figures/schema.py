"""CSV schemas the renderer understands, and strict validation against them.

The renderer is display-only: it checks that each input matches the
documented column order for its panel kind and never derives new
statistics from the data.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class SchemaMismatch(Exception):
    """Input CSV does not match the documented column order."""


# fixed leading columns per known file kind; a trailing "+" entry means one
# or more extra columns are allowed after the fixed prefix
SCHEMAS = {
    "heatmap": ["n", "beta", "mean_A1", "std_A1", "trials"],
    "heatmap_refcurve": ["n", "beta_ref"],
    "profile": ["x", "median_ratio", "q25", "q75", "theory_ratio",
                "abs_scaled", "abs_theory", "cum_mass", "cum_theory"],
    "field": ["qx", "qy", "qz", "chart_u", "chart_v", "+"],
    "histogram": ["trial", "seed", "a_n_T1", "A1", "+"],
    "histogram_theory": ["r", "weibull_cdf", "weibull_pdf"],
}


class Table:
    """Parsed CSV: comment header, column names, float-valued columns."""

    def __init__(self, comments, columns, data):
        self.comments = comments
        self.columns = columns
        self.data = data  # dict column -> np.ndarray (floats)

    def col(self, name) -> np.ndarray:
        return self.data[name]

    @property
    def nrows(self) -> int:
        return 0 if not self.columns else self.data[self.columns[0]].size


def read_table(path) -> Table:
    comments, header, rows = [], None, []
    with open(path, "r", newline="") as f:
        for line in f.read().splitlines():
            if line.startswith("#"):
                comments.append(line)
            elif header is None:
                header = line.split(",")
            elif line:
                rows.append(line.split(","))
    if header is None:
        raise SchemaMismatch(f"{path}: no header row found")
    arr = np.array(rows, dtype=float) if rows else np.empty((0, len(header)))
    data = {name: arr[:, i] for i, name in enumerate(header)}
    return Table(comments, header, data)


def validate(table: Table, kind: str, path) -> None:
    expected = SCHEMAS[kind]
    open_ended = expected and expected[-1] == "+"
    fixed = expected[:-1] if open_ended else expected
    for i, name in enumerate(fixed):
        if i >= len(table.columns):
            raise SchemaMismatch(f"{path}: missing column {name!r} at position {i}")
        if table.columns[i] != name:
            raise SchemaMismatch(
                f"{path}: column {i} is {table.columns[i]!r}, expected {name!r}")
    if not open_ended and len(table.columns) != len(fixed):
        extra = table.columns[len(fixed):]
        raise SchemaMismatch(f"{path}: unexpected trailing column {extra[0]!r}")
    if open_ended and len(table.columns) <= len(fixed):
        raise SchemaMismatch(f"{path}: expected extra data columns after {fixed[-1]!r}")


def load(path, kind: str) -> Table:
    path = Path(path)
    table = read_table(path)
    validate(table, kind, path)
    return table
