"""Nodal scalar fields over a mesh."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class FieldKind(str, enum.Enum):
    SOLUTION = "Solution"
    POTENTIAL = "Potential"
    BOUNDARY_DATA = "BoundaryData"
    DERIVED = "Derived"


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One value per mesh node.

    Potentials may carry ``inf`` at nodes where the potential blows up;
    solution fields may not.
    """

    mesh: object
    values: np.ndarray
    kind: FieldKind = FieldKind.DERIVED
    name: str = ""

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.mesh.n_nodes,):
            raise ValueError(f"field needs {self.mesh.n_nodes} values, got shape {vals.shape}")
        if self.kind is FieldKind.SOLUTION and not np.all(np.isfinite(vals)):
            raise ValueError("solution fields must be finite at every node")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    def __sub__(self, other):
        other_vals = other.values if isinstance(other, ScalarField) else other
        return ScalarField(self.mesh, self.values - other_vals, FieldKind.DERIVED)

    def __add__(self, other):
        other_vals = other.values if isinstance(other, ScalarField) else other
        return ScalarField(self.mesh, self.values + other_vals, FieldKind.DERIVED)

    def __neg__(self):
        return ScalarField(self.mesh, -self.values, self.kind, self.name)

    def renamed(self, name: str) -> "ScalarField":
        return ScalarField(self.mesh, self.values, self.kind, name)
