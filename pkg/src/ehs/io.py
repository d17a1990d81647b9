"""Deterministic table serialization for the command-line surface.

Complex values are split into paired real columns (name_re, name_im) so
any plotting tool can consume the output; every file embeds the resolved
configuration and package version for provenance, and byte-identical
reruns are guaranteed for a fixed configuration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence


@dataclass
class DataTable:
    name: str
    columns: List[str]
    rows: List[Sequence[float]]
    metadata: Dict = field(default_factory=dict)

    def add_row(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(
                f"row width {len(values)} does not match {len(self.columns)} columns"
            )
        self.rows.append([float(v) for v in values])


def split_complex(values) -> tuple:
    """Return (real, imag) float lists for a sequence of complex values."""
    import numpy as np

    arr = np.asarray(values, dtype=complex)
    return arr.real.tolist(), arr.imag.tolist()


def _format(value: float) -> str:
    return repr(float(value))


def write_table(table: DataTable, out_dir, fmt: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path = out_dir / f"{table.name}.csv"
        lines = [f"# {json.dumps(table.metadata, sort_keys=True)}"]
        lines.append(",".join(table.columns))
        for row in table.rows:
            lines.append(",".join(_format(v) for v in row))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif fmt == "json":
        path = out_dir / f"{table.name}.json"
        payload = {
            "metadata": table.metadata,
            "columns": table.columns,
            "rows": [[float(v) for v in row] for row in table.rows],
        }
        path.write_text(
            json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path
