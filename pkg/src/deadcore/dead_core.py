"""Dead-core detection, the proximity bound ``w <= Psi^-1(d)`` and blow-up rate fits."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .elliptic import DEFAULT_TOL, boundary_flux, nodal_source
from .errors import CornerBoundary, EmptyRegion, HypothesisViolated, InsufficientSamples, NonIntegrableGrowth
from .fields import ScalarField
from .geometry import Mesh, boundary_corners, boundary_curvature, distance_to_nodeset
from .kinetics import Kinetic, Smoothness, growth_functions


def default_threshold(h: float, tol: float = DEFAULT_TOL, kin: Kinetic | None = None) -> float:
    """Default ``eps_dc``.

    With a kinetic whose ``1/G`` is integrable, the threshold is
    ``Psi^-1(h)`` (``alpha = 0``): the value the comparison profile reaches one
    mesh width away from the core, so thresholding moves the detected edge
    by at most about ``h``. Otherwise ``h^2``. Never below ``10 tol``.
    """
    floor = 10.0 * tol
    if kin is not None:
        try:
            return max(floor, float(growth_functions(kin, 0.0).PsiInverse(h)))
        except NonIntegrableGrowth:
            pass
    return max(floor, h * h)


@dataclass(frozen=True, eq=False)
class DeadCoreRegion:
    """Nodes with ``w <= threshold`` and their lumped measure."""

    mesh: Mesh
    nodes: np.ndarray
    measure: float
    boundary_nodes: np.ndarray
    threshold: float

    @property
    def is_empty(self) -> bool:
        return self.nodes.size == 0

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.mesh.n_nodes, dtype=bool)
        m[self.nodes] = True
        return m

    @cached_property
    def distance(self) -> ScalarField:
        """``d(x, N)`` to the region's node set."""
        return distance_to_nodeset(self.mesh, self.nodes)

    def edge_radius(self) -> float:
        """Largest ``|x|`` over region nodes (slab and centred-disk benchmarks)."""
        if self.is_empty:
            return 0.0
        return float(np.max(np.linalg.norm(self.mesh.nodes[self.nodes], axis=1)))


def detect(w: ScalarField, eps_dc: float | None = None, tol: float = DEFAULT_TOL,
           kin: Kinetic | None = None) -> DeadCoreRegion:
    """Dead core ``{w <= eps_dc}``; ``eps_dc`` defaults to :func:`default_threshold`."""
    mesh = w.mesh
    if eps_dc is None:
        eps_dc = default_threshold(mesh.h_max, tol, kin)
    vals = np.asarray(w.values)
    mask = vals <= eps_dc
    nodes = np.flatnonzero(mask)
    measure = float(mesh.lumped_mass[mask].sum())
    # region nodes with at least one neighbour outside
    outside_neighbours = mesh.node_adjacency @ (~mask).astype(float)
    bnd = np.flatnonzero(mask & (outside_neighbours > 0))
    return DeadCoreRegion(mesh, nodes, measure, bnd, float(eps_dc))


def normal_derivative(w: ScalarField, kin: Kinetic | None = None, f=0.0,
                      recovery: str = "flux") -> np.ndarray:
    """Outward normal derivative at ``mesh.boundary_nodes``.

    ``recovery="flux"`` uses the discrete residual of the state equation
    (``w`` must solve it with kinetic ``kin`` and source ``f``);
    ``"average"`` dots the averaged element gradient with the node normal.
    """
    mesh = w.mesh
    if recovery == "flux":
        if kin is None:
            raise ValueError("flux recovery needs the kinetic")
        reaction = np.asarray(kin.value(np.asarray(w.values)), dtype=float)
        return boundary_flux(mesh, w.values, reaction, nodal_source(mesh, f))
    if recovery == "average":
        from .elliptic import recovered_gradient

        grad = recovered_gradient(w)
        bnd = mesh.boundary_nodes
        return np.einsum("nd,nd->n", grad[bnd], mesh.boundary_node_normals[bnd])
    raise ValueError(f"unknown recovery {recovery!r}")


def compute_alpha(w: ScalarField, mesh: Mesh | None = None, kin: Kinetic | None = None, f=0.0,
                  corner_fraction: float = 0.05, recovery: str = "flux") -> float:
    """``alpha = max(0, min over the boundary of H dw/dn)``.

    1D boundaries are flat, so ``alpha = 0``. Corner nodes are skipped; if they
    make up more than ``corner_fraction`` of the boundary the curvature is
    considered undefined.

    Raises
    ------
    CornerBoundary
    """
    mesh = w.mesh if mesh is None else mesh
    if mesh.dim == 1:
        return 0.0
    bnd = mesh.boundary_nodes
    corners = boundary_corners(mesh)
    if len(corners) > corner_fraction * len(bnd):
        raise CornerBoundary(f"{len(corners)} of {len(bnd)} boundary nodes are corners")
    curv = boundary_curvature(mesh)
    dn = normal_derivative(w, kin, f, recovery)
    vals = [curv[int(i)] * dn[k] for k, i in enumerate(bnd) if int(i) not in corners]
    return max(0.0, float(min(vals)))


def _require_zero_source(mesh: Mesh, f):
    if np.any(nodal_source(mesh, f) != 0.0):
        raise HypothesisViolated("dead-core proximity bound requires f = 0")


def psi_bound_check(w: ScalarField, region: DeadCoreRegion, kin: Kinetic, alpha: float = 0.0,
                    band: float = 1.0, f=0.0):
    """Compare ``w`` with ``Psi^-1(d(x, N))`` on ``{d <= band}``.

    Returns
    -------
    max_violation : float
        ``max(w - Psi^-1(d))`` over the band (region nodes included).
    table : dict of arrays
        Columns ``node, x, y, d, w, psi_inv_d, violation``.

    Raises
    ------
    HypothesisViolated
        If ``f`` is not identically zero.
    EmptyRegion
    """
    mesh = w.mesh
    _require_zero_source(mesh, f)
    if region.is_empty:
        raise EmptyRegion("no dead core detected")
    gf = growth_functions(kin, alpha)
    d = np.asarray(region.distance.values)
    nodes = np.flatnonzero(d <= band)
    dn = d[nodes]
    uniq, inv = np.unique(dn, return_inverse=True)
    bound = np.asarray(gf.PsiInverse(uniq), dtype=float)[inv]
    wv = np.asarray(w.values)[nodes]
    viol = wv - bound
    xy = mesh.nodes[nodes]
    table = {
        "node": nodes,
        "x": xy[:, 0].copy(),
        "y": xy[:, 1].copy() if mesh.dim == 2 else np.zeros(nodes.size),
        "d": dn,
        "w": wv,
        "psi_inv_d": bound,
        "violation": viol,
    }
    return float(viol.max()), table


def edge_offset(region: DeadCoreRegion, kin: Kinetic) -> float:
    """``Psi(threshold)``, the width of the band where ``0 < w <= threshold`` next to the core.

    Zero when ``1/G`` is not integrable.
    """
    try:
        return float(growth_functions(kin, 0.0).Psi(region.threshold))
    except NonIntegrableGrowth:
        return 0.0


class BlowupFit(NamedTuple):
    exponent: float
    log_constant: float
    r2: float
    n_samples: int

    @property
    def constant(self) -> float:
        return math.exp(self.log_constant)


def blowup_rate_fit(w: ScalarField, region: DeadCoreRegion, kin: Kinetic, band: float = 1.0,
                    skip: float | None = None, min_samples: int = 10,
                    edge_correction: bool = True) -> BlowupFit:
    """Least-squares fit ``log beta'(w) = exponent log d + log_constant``.

    Uses nodes with ``skip <= d <= band``. Closer to the core ``w`` is below
    the discretization error and ``beta'(w)`` is noise. ``skip`` defaults to
    ``3 max(h, delta)`` with ``delta = Psi(threshold)`` from :func:`edge_offset`.

    The detected region includes the layer ``0 < w <= threshold``, so node
    distances to it undershoot distances to the true core by about ``delta``
    (exactly in 1D). With ``edge_correction`` the fit uses ``d + delta``.
    Without it the exponent is biased toward zero once ``delta`` is a few
    mesh widths, as happens for ``q`` near 1 with a ``10 tol`` threshold floor.

    Raises
    ------
    EmptyRegion
    InsufficientSamples
        Fewer than ``min_samples`` usable nodes.
    """
    if kin.smoothness is not Smoothness.SINGULAR_AT_ZERO:
        raise ValueError("blow-up fits need a kinetic singular at zero")
    if region.is_empty:
        raise EmptyRegion("no dead core detected")
    mesh = w.mesh
    delta = edge_offset(region, kin)
    if skip is None:
        skip = 3.0 * max(mesh.h_max, delta)
    d = np.asarray(region.distance.values)
    wv = np.asarray(w.values)
    use = (d >= skip) & (d <= band) & (wv > 0.0)
    n = int(use.sum())
    if n < min_samples:
        raise InsufficientSamples(f"{n} usable nodes, need {min_samples}")
    X = np.log(d[use] + delta) if edge_correction else np.log(d[use])
    Y = np.log(np.asarray(kin.derivative(wv[use]), dtype=float))
    slope, intercept = np.polyfit(X, Y, 1)
    pred = slope * X + intercept
    ss_res = float(np.sum((Y - pred) ** 2))
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return BlowupFit(float(slope), float(intercept), r2, n)
