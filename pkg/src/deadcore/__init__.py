"""Finite-element tools for semilinear problems with dead cores and their shape derivatives."""
from .dead_core import DeadCoreRegion, detect
from .elliptic import solve_linear_potential, solve_semilinear, solve_semilinear_u, solve_transported
from .errors import DeadcoreError
from .fields import FieldKind, ScalarField
from .geometry import Mesh, build_disk_mesh, build_rectangle_mesh, build_slab_mesh
from .kinetics import Kinetic, make_linear_kinetic, make_lipschitz_ramp, make_root_kinetic
from .shape_derivative import solve_v

__version__ = "0.1.0"

__all__ = [
    "DeadCoreRegion",
    "DeadcoreError",
    "FieldKind",
    "Kinetic",
    "Mesh",
    "ScalarField",
    "build_disk_mesh",
    "build_rectangle_mesh",
    "build_slab_mesh",
    "detect",
    "make_linear_kinetic",
    "make_lipschitz_ramp",
    "make_root_kinetic",
    "solve_linear_potential",
    "solve_semilinear",
    "solve_semilinear_u",
    "solve_transported",
    "solve_v",
]
