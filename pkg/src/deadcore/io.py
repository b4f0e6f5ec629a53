"""Writers for legacy VTK, CSV tables and JSON summaries.

Floats are written with ``repr`` so output is exact and byte-stable across runs.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .fields import ScalarField
from .geometry import Mesh

# VTK cell type ids
_VTK_LINE = 3
_VTK_TRIANGLE = 5


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> Path:
    """Comma-separated, header row, LF line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])
    return path


def write_columns_csv(path, columns: dict) -> Path:
    """Write a dict of equal-length columns."""
    header = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    rows = ([columns[k][i] for k in header] for i in range(n))
    return write_csv(path, header, rows)


def write_field_csv(path, fields) -> Path:
    """Columns ``node_id, x, y, <field names>``; ``y`` is 0 on 1D meshes."""
    if isinstance(fields, ScalarField):
        fields = [fields]
    mesh = fields[0].mesh
    names = [f.name or f"field{k}" for k, f in enumerate(fields)]
    header = ["node_id", "x", "y"] + names
    xs = mesh.nodes[:, 0]
    ys = mesh.nodes[:, 1] if mesh.dim == 2 else np.zeros(mesh.n_nodes)
    rows = ([i, xs[i], ys[i]] + [f.values[i] for f in fields] for i in range(mesh.n_nodes))
    return write_csv(path, header, rows)


def write_vtk(path, mesh: Mesh, point_data: dict | None = None, title: str = "deadcore") -> Path:
    """Legacy ASCII ``UNSTRUCTURED_GRID`` with scalar point data.

    Infinite values (potential sentinels) are written as ``1e300`` since the
    legacy format has no infinity token.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = mesh.n_nodes
    pts = np.zeros((n, 3))
    pts[:, : mesh.dim] = mesh.nodes
    cells = mesh.elements
    k = cells.shape[1]
    ctype = _VTK_LINE if mesh.dim == 1 else _VTK_TRIANGLE
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    lines += [" ".join(repr(float(c)) for c in p) for p in pts]
    lines.append(f"CELLS {len(cells)} {len(cells) * (k + 1)}")
    lines += [f"{k} " + " ".join(str(int(i)) for i in c) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(ctype)] * len(cells)
    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, values in point_data.items():
            vals = np.asarray(values.values if isinstance(values, ScalarField) else values, dtype=float)
            if vals.shape != (n,):
                raise ValueError(f"point data {name!r} has the wrong length")
            lines.append(f"SCALARS {name.replace(' ', '_')} double 1")
            lines.append("LOOKUP_TABLE default")
            lines += [repr(float(v)) if math.isfinite(v) else ("1e300" if v > 0 else "-1e300") for v in vals]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _finite(obj):
    """Replace non-finite floats by strings so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_finite(data), indent=2, default=_json_default) + "\n", encoding="utf-8")
    return path
