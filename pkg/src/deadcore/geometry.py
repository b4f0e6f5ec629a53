"""Simplicial meshes, domain perturbation fields and transported coefficients.

Meshes are 1D interval partitions or 2D triangulations with counter-clockwise
elements. A perturbation field ``theta`` moves the domain to
``(I + tau theta) Omega``; pulling the Dirichlet form back to the fixed domain
gives the coefficients

    J_tau = det(I + tau D theta)
    A_tau = J_tau (I + tau D theta)^-1 (I + tau D theta)^-T
    f_tau = f o (I + tau theta)
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay, cKDTree

from .errors import (
    DegenerateBoundary,
    EmptyTarget,
    InvertedElement,
    NonConformingMesh,
    SingularTransform,
)
from .fields import FieldKind, ScalarField

COLLINEAR_TOL = 1e-14


def _readonly(arr, dtype):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming simplicial mesh with boundary facets and outward normals.

    ``boundary_facets`` holds node tuples of the boundary: single nodes in 1D,
    oriented edges in 2D (oriented so the domain lies on their left).
    """

    nodes: np.ndarray
    elements: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        elements = np.array(self.elements, dtype=np.int64)
        dim = nodes.shape[1]
        if dim not in (1, 2) or elements.ndim != 2 or elements.shape[1] != dim + 1:
            raise ValueError("expected 1D segments or 2D triangles")
        object.__setattr__(self, "nodes", _readonly(nodes, float))
        object.__setattr__(self, "elements", _readonly(elements, np.int64))
        measures = self._signed_measures()
        if np.any(measures <= 0.0):
            bad = int(np.argmin(measures))
            raise InvertedElement(f"element {bad} has nonpositive measure {measures[bad]:.3e}")
        object.__setattr__(self, "element_measures", _readonly(measures, float))
        facets, normals = self._boundary()
        object.__setattr__(self, "boundary_facets", _readonly(facets, np.int64))
        object.__setattr__(self, "boundary_normals", _readonly(normals, float))
        object.__setattr__(self, "boundary_nodes",
                           _readonly(np.unique(facets.ravel()), np.int64))

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def _signed_measures(self):
        p = self.nodes[self.elements]
        if self.dim == 1:
            return p[:, 1, 0] - p[:, 0, 0]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def _boundary(self):
        if self.dim == 1:
            counts = np.bincount(self.elements.ravel(), minlength=self.n_nodes)
            if np.any(counts > 2):
                raise NonConformingMesh("a 1D node is shared by more than two segments")
            ends = np.flatnonzero(counts == 1)
            # left endpoints of their element face -x
            is_left = np.isin(ends, self.elements[:, 0])
            normals = np.where(is_left, -1.0, 1.0)[:, None]
            return ends[:, None], normals
        edges = self.directed_edges
        key = np.sort(edges, axis=1)
        _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        if np.any(counts > 2):
            raise NonConformingMesh("an edge is shared by more than two triangles")
        bnd = edges[counts[inverse.ravel()] == 1]
        d = self.nodes[bnd[:, 1]] - self.nodes[bnd[:, 0]]
        length = np.hypot(d[:, 0], d[:, 1])
        normals = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
        return bnd, normals

    @cached_property
    def directed_edges(self) -> np.ndarray:
        el = self.elements
        if self.dim == 1:
            return el.copy()
        return np.concatenate([el[:, [0, 1]], el[:, [1, 2]], el[:, [2, 0]]])

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted."""
        return np.unique(np.sort(self.directed_edges, axis=1), axis=0)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        return np.sqrt(np.sum(d * d, axis=1))

    @property
    def h_max(self) -> float:
        return float(self.edge_lengths.max())

    @property
    def h_min(self) -> float:
        return float(self.edge_lengths.min())

    @property
    def total_measure(self) -> float:
        return float(self.element_measures.sum())

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Constant gradients of the nodal basis, shape ``(E, dim+1, dim)``."""
        p = self.nodes[self.elements]
        if self.dim == 1:
            g = 1.0 / self.element_measures
            return np.stack([-g, g], axis=1)[:, :, None]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edges
        g12 = np.linalg.inv(jac)  # row k = gradient of basis function k+1
        g0 = -g12.sum(axis=1)
        return np.concatenate([g0[:, None, :], g12], axis=1)

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        from .elliptic import lumped_mass

        out = lumped_mass(self)
        out.setflags(write=False)
        return out

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        from .elliptic import assemble_stiffness

        return assemble_stiffness(self)

    @cached_property
    def boundary_weights(self) -> np.ndarray:
        """Integral of each nodal basis function over the boundary (0 off it)."""
        w = np.zeros(self.n_nodes)
        if self.dim == 1:
            w[self.boundary_facets[:, 0]] = 1.0
            return w
        f = self.boundary_facets
        d = self.nodes[f[:, 1]] - self.nodes[f[:, 0]]
        length = np.hypot(d[:, 0], d[:, 1])
        np.add.at(w, f[:, 0], 0.5 * length)
        np.add.at(w, f[:, 1], 0.5 * length)
        return w

    @cached_property
    def boundary_node_normals(self) -> np.ndarray:
        """Unit normals at nodes, length-weighted average of adjacent facets."""
        n = np.zeros((self.n_nodes, self.dim))
        if self.dim == 1:
            n[self.boundary_facets[:, 0]] = self.boundary_normals
            return n
        f = self.boundary_facets
        d = self.nodes[f[:, 1]] - self.nodes[f[:, 0]]
        length = np.hypot(d[:, 0], d[:, 1])[:, None]
        np.add.at(n, f[:, 0], self.boundary_normals * length)
        np.add.at(n, f[:, 1], self.boundary_normals * length)
        norm = np.linalg.norm(n, axis=1)
        mask = norm > 0
        n[mask] /= norm[mask][:, None]
        return n

    @cached_property
    def node_adjacency(self) -> sp.csr_matrix:
        e = self.edges
        n = self.n_nodes
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def with_nodes(self, nodes) -> "Mesh":
        return Mesh(nodes, self.elements)

    def summary(self) -> dict:
        n_edges = len(self.edges)
        return {
            "dimension": self.dim,
            "n_nodes": self.n_nodes,
            "n_elements": self.n_elements,
            "n_edges": n_edges,
            "n_boundary_nodes": int(len(self.boundary_nodes)),
            "h_min": self.h_min,
            "h_max": self.h_max,
            "measure": self.total_measure,
        }


def build_slab_mesh(L: float, h: float) -> Mesh:
    """Uniform partition of ``[-L, L]`` with spacing at most ``h``."""
    if not (L > 0 and h > 0):
        raise ValueError("L and h must be positive")
    if h >= L:
        raise ValueError(f"h={h} must be smaller than L={L}")
    n_el = int(math.ceil(2.0 * L / h - 1e-9))
    x = np.linspace(-L, L, n_el + 1)
    elements = np.column_stack([np.arange(n_el), np.arange(1, n_el + 1)])
    return Mesh(x[:, None], elements)


def _disk_arrays(R, K):
    pts = [np.zeros((1, 2))]
    for k in range(1, K + 1):
        n = 6 * k
        # stagger alternate rings so neighbouring rings are not co-radial
        ang = 2.0 * np.pi * (np.arange(n) + 0.5 * (k % 2)) / n
        pts.append(R * k / K * np.column_stack([np.cos(ang), np.sin(ang)]))
    nodes = np.vstack(pts)
    # Delaunay keeps opposite angles summing to at most pi, so the P1
    # stiffness matrix has nonpositive off-diagonals
    el = Delaunay(nodes).simplices.astype(np.int64)
    p = nodes[el]
    cross = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
             - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    el = el[np.abs(cross) > 1e-12 * R * R]
    cross = cross[np.abs(cross) > 1e-12 * R * R]
    flip = cross < 0
    el[flip] = el[flip][:, [0, 2, 1]]
    return nodes, el


def build_disk_mesh(R: float, h: float) -> Mesh:
    """Delaunay triangulation of concentric rings in the disk of radius ``R``.

    Ring ``k`` carries ``6k`` equally spaced nodes and the outer ring lies on
    the circle. The ring count is the smallest one giving a maximum edge
    length ``<= h``.
    """
    if not (R > 0 and h > 0):
        raise ValueError("R and h must be positive")
    if h >= R / 2.0:
        raise ValueError(f"h={h} must be smaller than R/2={R / 2.0}")
    trial = max(2, int(math.ceil(R / h)))
    ratio = Mesh(*_disk_arrays(R, trial)).h_max * trial / R
    K = max(2, int(math.ceil(ratio * R / h - 1e-9)))
    while True:
        mesh = Mesh(*_disk_arrays(R, K))
        if mesh.h_max <= h:
            return mesh
        K += 1


def build_rectangle_mesh(a: float, b: float, h: float) -> Mesh:
    """Structured right-triangle mesh of ``[-a, a] x [-b, b]``."""
    nx = int(math.ceil(2.0 * a / h - 1e-9))
    ny = int(math.ceil(2.0 * b / h - 1e-9))
    x = np.linspace(-a, a, nx + 1)
    y = np.linspace(-b, b, ny + 1)
    X, Y = np.meshgrid(x, y, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    p00 = idx[:-1, :-1].ravel()
    p10 = idx[:-1, 1:].ravel()
    p01 = idx[1:, :-1].ravel()
    p11 = idx[1:, 1:].ravel()
    el = np.concatenate([np.column_stack([p00, p10, p11]), np.column_stack([p00, p11, p01])])
    return Mesh(nodes, el)


def euler_characteristic(mesh: Mesh) -> int:
    return mesh.n_nodes - len(mesh.edges) + mesh.n_elements


@dataclass(frozen=True)
class PerturbationField:
    """A Lipschitz vector field ``theta`` with its Jacobian.

    ``value(x)`` maps ``(N, d)`` points to ``(N, d)`` vectors and ``jacobian(x)``
    to ``(N, d, d)`` matrices. ``jacobian_bound`` is a global bound on the
    spectral norm of ``D theta``; it fixes the admissible range of ``tau``.
    """

    name: str
    dim: int
    value: Callable
    jacobian: Callable
    jacobian_bound: float
    affine: bool = False

    @property
    def tau_max(self) -> float:
        if self.jacobian_bound == 0.0:
            return math.inf
        return 1.0 / (2.0 * self.jacobian_bound)

    def sup_norms(self, points) -> tuple[float, float]:
        """Sampled ``(sup |theta|, sup ||D theta||_2)`` over ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        th = self.value(pts)
        jac = self.jacobian(pts)
        th_sup = float(np.max(np.linalg.norm(th, axis=1))) if len(pts) else 0.0
        jac_sup = float(np.max(np.linalg.norm(jac, ord=2, axis=(1, 2)))) if len(pts) else 0.0
        return th_sup, jac_sup


def zero_field(dim: int) -> PerturbationField:
    return PerturbationField(
        "zero", dim,
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        lambda x: np.zeros((len(x), dim, dim)),
        0.0, True)


def dilation_field(dim: int, scale: float = 1.0) -> PerturbationField:
    """``theta(x) = scale * x``."""
    eye = np.eye(dim)
    return PerturbationField(
        "dilation", dim,
        lambda x: scale * np.asarray(x, dtype=float),
        lambda x: np.broadcast_to(scale * eye, (len(x), dim, dim)).copy(),
        abs(scale), True)


def shear_field(dim: int, scale: float = 1.0) -> PerturbationField:
    """``theta(x) = scale * (x_1, 0)``: stretches the first coordinate only."""
    jac = np.zeros((dim, dim))
    jac[0, 0] = scale

    def value(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[:, 0] = scale * x[:, 0]
        return out

    return PerturbationField("shear", dim, value,
                             lambda x: np.broadcast_to(jac, (len(x), dim, dim)).copy(),
                             abs(scale), True)


def translation_field(vector) -> PerturbationField:
    vec = np.asarray(vector, dtype=float)
    dim = len(vec)
    return PerturbationField(
        "translation", dim,
        lambda x: np.broadcast_to(vec, np.shape(x)).copy(),
        lambda x: np.zeros((len(x), dim, dim)),
        0.0, True)


def sine_field(dim: int, amplitude: float = 0.5, wavenumber: float = 1.0) -> PerturbationField:
    """Non-affine field ``theta(x) = amplitude * sin(wavenumber * x_1) e_1``."""

    def value(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[:, 0] = amplitude * np.sin(wavenumber * x[:, 0])
        return out

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros((len(x), dim, dim))
        out[:, 0, 0] = amplitude * wavenumber * np.cos(wavenumber * x[:, 0])
        return out

    return PerturbationField("sine", dim, value, jacobian, abs(amplitude * wavenumber))


def field_from_config(entry: dict, dim: int) -> PerturbationField:
    kind = entry.get("type", "dilation")
    if kind == "zero":
        return zero_field(dim)
    if kind == "dilation":
        return dilation_field(dim, float(entry.get("scale", 1.0)))
    if kind == "shear":
        return shear_field(dim, float(entry.get("scale", 1.0)))
    if kind == "translation":
        vec = entry.get("vector", [1.0] + [0.0] * (dim - 1))
        if len(vec) != dim:
            raise ValueError(f"translation vector needs {dim} components")
        return translation_field(vec)
    if kind == "sine":
        return sine_field(dim, float(entry.get("amplitude", 0.5)), float(entry.get("wavenumber", 1.0)))
    raise ValueError(f"unknown perturbation field {kind!r}")


@dataclass(frozen=True)
class TransportedCoefficients:
    tau: float
    J: Callable
    A: Callable
    f_pullback: Callable
    tau_max: float

    def min_eigenvalue(self, points) -> float:
        """Smallest eigenvalue of ``A_tau`` over ``points`` (coercivity check)."""
        return float(np.min(np.linalg.eigvalsh(self.A(points))))


def transported_coefficients(theta: PerturbationField, f, tau: float) -> TransportedCoefficients:
    """Coefficients of the perturbed problem pulled back to the fixed domain.

    ``f`` is a callable on ``(N, d)`` points or a constant.

    Raises
    ------
    SingularTransform
        If ``|tau| * ||D theta||_inf >= 1``, where ``I + tau D theta`` may be singular.
    """
    if abs(tau) * theta.jacobian_bound >= 1.0:
        raise SingularTransform(
            f"|tau| * ||D theta|| = {abs(tau) * theta.jacobian_bound:.3g} >= 1")
    dim = theta.dim
    eye = np.eye(dim)

    def _map(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return eye + tau * theta.jacobian(x)

    def J(x):
        return np.linalg.det(_map(x))

    def A(x):
        m = _map(x)
        inv = np.linalg.inv(m)
        return np.linalg.det(m)[:, None, None] * (inv @ inv.transpose(0, 2, 1))

    def f_pullback(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        moved = x + tau * theta.value(x)
        if callable(f):
            return np.asarray(f(moved), dtype=float)
        return np.full(len(x), float(f))

    return TransportedCoefficients(float(tau), J, A, f_pullback, theta.tau_max)


def perturb_mesh(mesh: Mesh, theta: PerturbationField, tau: float) -> Mesh:
    """Move every node to ``x + tau theta(x)`` keeping the connectivity.

    Raises
    ------
    InvertedElement
        If some element degenerates or flips.
    """
    if tau == 0.0:
        return mesh
    return mesh.with_nodes(mesh.nodes + tau * theta.value(mesh.nodes))


def distance_to_nodeset(mesh: Mesh, target) -> ScalarField:
    """Euclidean distance from every node to the nearest node of ``target``."""
    target = np.asarray(sorted(set(int(i) for i in target)), dtype=np.int64)
    if target.size == 0:
        raise EmptyTarget("distance to an empty node set is undefined")
    tree = cKDTree(mesh.nodes[target])
    d, _ = tree.query(mesh.nodes)
    d[target] = 0.0
    return ScalarField(mesh, d, FieldKind.DERIVED, "distance")


def boundary_loops(mesh: Mesh) -> list[list[int]]:
    """Boundary node cycles of a 2D mesh, each ordered counter-clockwise."""
    if mesh.dim != 2:
        raise ValueError("boundary loops exist only for 2D meshes")
    nxt = {int(a): int(b) for a, b in mesh.boundary_facets}
    loops, seen = [], set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop, cur = [], start
        while cur not in seen:
            seen.add(cur)
            loop.append(cur)
            cur = nxt[cur]
        loops.append(loop)
    return loops


def _signed_curvature(a, b, c) -> float:
    ab, bc, ca = b - a, c - b, a - c
    cross = ab[0] * (c - a)[1] - ab[1] * (c - a)[0]
    la, lb, lc = np.linalg.norm(ab), np.linalg.norm(bc), np.linalg.norm(ca)
    if abs(cross) <= COLLINEAR_TOL * max(la * lc, 1e-300):
        raise DegenerateBoundary("collinear boundary nodes")
    return float(2.0 * cross / (la * lb * lc))


def boundary_curvature(mesh: Mesh) -> dict[int, float]:
    """Discrete curvature at boundary nodes from circumscribed circles.

    Positive on convex parts of the boundary (``1/R`` on a circle of radius
    ``R``). Collinear neighbours give 0. 1D endpoints give 0.
    """
    if mesh.dim == 1:
        return {int(i): 0.0 for i in mesh.boundary_nodes}
    out = {}
    for loop in boundary_loops(mesh):
        n = len(loop)
        for k, node in enumerate(loop):
            a = mesh.nodes[loop[k - 1]]
            b = mesh.nodes[node]
            c = mesh.nodes[loop[(k + 1) % n]]
            try:
                out[node] = _signed_curvature(a, b, c)
            except DegenerateBoundary:
                out[node] = 0.0
    return out


def boundary_corners(mesh: Mesh, angle_tol: float = math.pi / 6.0) -> set[int]:
    """Boundary nodes where the boundary turns by more than ``angle_tol``."""
    if mesh.dim == 1:
        return set()
    corners = set()
    for loop in boundary_loops(mesh):
        n = len(loop)
        for k, node in enumerate(loop):
            d1 = mesh.nodes[node] - mesh.nodes[loop[k - 1]]
            d2 = mesh.nodes[loop[(k + 1) % n]] - mesh.nodes[node]
            cosang = np.dot(d1, d2) / (np.linalg.norm(d1) * np.linalg.norm(d2))
            if math.acos(max(-1.0, min(1.0, cosang))) > angle_tol:
                corners.add(node)
    return corners


def domain_from_config(entry: dict) -> Mesh:
    kind = entry.get("type")
    if kind == "slab":
        return build_slab_mesh(float(entry["L"]), float(entry["h"]))
    if kind == "disk":
        return build_disk_mesh(float(entry["R"]), float(entry["h"]))
    if kind == "rectangle":
        return build_rectangle_mesh(float(entry["a"]), float(entry["b"]), float(entry["h"]))
    raise ValueError(f"unknown domain type {kind!r}")


def locate_points(mesh: Mesh, points, k_candidates: int = 16):
    """Containing element and barycentric coordinates for each point.

    Returns ``(element, bary)`` with ``element = -1`` for points outside the
    mesh. Candidates are the elements with the nearest barycenters.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if mesh.dim == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
        pts = pts.T
    n = len(pts)
    d = mesh.dim
    element = np.full(n, -1, dtype=np.int64)
    bary = np.zeros((n, d + 1))
    k = min(k_candidates, mesh.n_elements)
    _, cand = cKDTree(mesh.barycenters).query(pts, k=k)
    cand = np.atleast_2d(cand).reshape(n, k)
    corners = mesh.nodes[mesh.elements]
    slack = -1e-12
    for j in range(k):
        todo = np.flatnonzero(element < 0)
        if todo.size == 0:
            break
        el = cand[todo, j]
        c = corners[el]
        if d == 1:
            lam1 = (pts[todo, 0] - c[:, 0, 0]) / (c[:, 1, 0] - c[:, 0, 0])
            lam = np.column_stack([1.0 - lam1, lam1])
        else:
            T = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]], axis=2)
            rhs = pts[todo] - c[:, 0]
            sol = np.linalg.solve(T, rhs[:, :, None])[:, :, 0]
            lam = np.column_stack([1.0 - sol.sum(axis=1), sol])
        hit = np.all(lam >= slack, axis=1)
        element[todo[hit]] = el[hit]
        bary[todo[hit]] = lam[hit]
    return element, bary


def interpolate(field: ScalarField, points, fill: float = 0.0) -> np.ndarray:
    """Evaluate the piecewise-linear interpolant of ``field`` at ``points``; ``fill`` outside."""
    mesh = field.mesh
    element, bary = locate_points(mesh, points)
    out = np.full(len(element), float(fill))
    inside = element >= 0
    vals = np.asarray(field.values)[mesh.elements[element[inside]]]
    out[inside] = np.einsum("ek,ek->e", vals, bary[inside])
    return out
