"""Byte-deterministic table output.

A :class:`Table` is a list of row dicts with a fixed column order plus a
metadata dict. CSV files start with ``# key: <json>`` comment lines (sorted by
key) followed by a header and the rows; floats are written with ``repr`` so
they round-trip exactly. JSON files use sorted keys and a fixed indent.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np


def jsonable(value):
    """Convert numpy scalars, Fractions, tuples and non-finite floats for ``json``."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def dumps(obj):
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _cell(value):
    value = jsonable(value)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, dict)):
        return json.dumps(value, sort_keys=True)
    return str(value)


@dataclass
class Table:
    name: str
    columns: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, **row):
        unknown = set(row) - set(self.columns)
        if unknown:
            raise KeyError(f"columns not in table {self.name!r}: {sorted(unknown)}")
        self.rows.append(row)

    def to_csv(self):
        buf = io.StringIO()
        for key in sorted(self.metadata):
            buf.write(f"# {key}: {json.dumps(jsonable(self.metadata[key]), sort_keys=True)}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_cell(row.get(c)) for c in self.columns])
        return buf.getvalue()

    def to_json(self):
        rows = [{c: row.get(c) for c in self.columns} for row in self.rows]
        return dumps({"table": self.name, "columns": self.columns, "metadata": self.metadata, "rows": rows})

    def write(self, out_dir, formats=("csv", "json")):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for fmt in formats:
            text = self.to_csv() if fmt == "csv" else self.to_json()
            path = out_dir / f"{self.name}.{fmt}"
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            paths.append(path)
        return paths


def read_csv_rows(path):
    """Rows of a table CSV as dicts of strings, skipping the metadata lines."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
