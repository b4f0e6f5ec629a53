import json
import math

import numpy as np
import pytest

from deadcore.fields import ScalarField
from deadcore.geometry import build_disk_mesh, build_slab_mesh
from deadcore.io import write_columns_csv, write_csv, write_field_csv, write_json, write_vtk


def _sections(text):
    lines = text.splitlines()
    return lines, {ln.split()[0]: i for i, ln in enumerate(lines) if ln[:1].isalpha()}


def test_vtk_triangles(tmp_path):
    mesh = build_disk_mesh(1.0, 0.4)
    vals = np.arange(mesh.n_nodes, dtype=float)
    vals[0] = math.inf
    path = write_vtk(tmp_path / "m.vtk", mesh, {"w": ScalarField(mesh, vals), "mask": vals > 3}, "t")
    lines, idx = _sections(path.read_text())
    assert lines[0] == "# vtk DataFile Version 3.0" and lines[2] == "ASCII"
    assert lines[idx["POINTS"]] == f"POINTS {mesh.n_nodes} double"
    ne = len(mesh.elements)
    assert lines[idx["CELLS"]] == f"CELLS {ne} {4 * ne}"
    assert set(lines[idx["CELL_TYPES"] + 1: idx["CELL_TYPES"] + 1 + ne]) == {"5"}
    assert lines[idx["POINT_DATA"]] == f"POINT_DATA {mesh.n_nodes}"
    start = lines.index("SCALARS w double 1") + 2
    assert lines[start] == "1e300"
    assert float(lines[start + 5]) == 5.0
    assert "SCALARS mask double 1" in lines


def test_vtk_lines(tmp_path):
    mesh = build_slab_mesh(1.0, 0.5)
    lines, idx = _sections(write_vtk(tmp_path / "s.vtk", mesh).read_text())
    assert lines[idx["CELLS"] + 1].startswith("2 ")
    assert lines[idx["CELL_TYPES"] + 1] == "3"
    assert lines[idx["POINTS"] + 1].split()[1:] == ["0.0", "0.0"]


def test_vtk_rejects_wrong_length(tmp_path):
    mesh = build_slab_mesh(1.0, 0.5)
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "s.vtk", mesh, {"w": np.zeros(2)})


def test_csv_lf_and_exact_floats(tmp_path):
    path = write_csv(tmp_path / "a.csv", ["x", "flag"], [[0.1, True], [1 / 3, np.False_]])
    data = path.read_bytes()
    assert b"\r" not in data
    assert data.decode().splitlines() == ["x,flag", "0.1,1", f"{1 / 3!r},0"]


def test_csv_deterministic(tmp_path):
    cols = {"a": np.linspace(0, 1, 7), "b": np.arange(7)}
    one = write_columns_csv(tmp_path / "1.csv", cols).read_bytes()
    two = write_columns_csv(tmp_path / "2.csv", cols).read_bytes()
    assert one == two


def test_field_csv_columns(tmp_path):
    mesh = build_slab_mesh(1.0, 0.5)
    f = ScalarField(mesh, mesh.nodes[:, 0] ** 2, name="w")
    rows = write_field_csv(tmp_path / "f.csv", f).read_text().splitlines()
    assert rows[0] == "node_id,x,y,w"
    assert rows[1] == "0,-1.0,0.0,1.0"
    assert len(rows) == mesh.n_nodes + 1


def test_json_non_finite(tmp_path):
    path = write_json(tmp_path / "s.json", {"a": math.inf, "b": [np.float64(-math.inf), math.nan],
                                            "c": np.int64(3), "d": np.arange(2), "e": tmp_path})
    data = json.loads(path.read_text())
    assert data == {"a": "inf", "b": ["-inf", "nan"], "c": 3, "d": [0, 1], "e": str(tmp_path)}
