"""Reference solutions: closed-form slab profiles and a fine radial solver.

The slab ``[-L, L]`` with root kinetics ``beta(s) = lam |s|^(q-1) s`` and
``f = 0`` has the explicit solution ``w = A (|x| - rho)_+^p`` with
``p = 2/(1-q)``. Its linearization about ``w`` is an Euler equation
``-v'' + c (x - rho)^-2 v = 0`` whose bounded solution is a power of
``x - rho``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .elliptic import DEFAULT_TOL, _plain_reaction, _solve_nonlinear
from .errors import NoConvergence, NoDeadCore
from .geometry import build_slab_mesh
from .kinetics import Kinetic


def root_threshold(lam: float, q: float) -> float:
    """Smallest half-width ``L`` for which the root-kinetics slab has a dead core."""
    return math.sqrt(2.0 * (1.0 + q) / lam) / (1.0 - q)


def _check_root_params(lam, q):
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0,1)")
    if not lam > 0.0:
        raise ValueError("lambda must be positive")


@dataclass(frozen=True)
class SlabRootProfile:
    """``w(x) = A (|x| - rho)_+^p`` on ``[-L, L]``."""

    lam: float
    q: float
    L: float
    rho: float
    A: float
    p: float

    def __call__(self, x):
        s = np.maximum(np.abs(np.asarray(x, dtype=float)) - self.rho, 0.0)
        return self.A * s ** self.p

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        s = np.maximum(np.abs(x) - self.rho, 0.0)
        return np.sign(x) * self.A * self.p * s ** (self.p - 1.0)

    def second_derivative(self, x):
        s = np.maximum(np.abs(np.asarray(x, dtype=float)) - self.rho, 0.0)
        return self.A * self.p * (self.p - 1.0) * s ** (self.p - 2.0)

    @property
    def derivative_at_L(self) -> float:
        return float(self.A * self.p * (self.L - self.rho) ** (self.p - 1.0))

    def __iter__(self):
        # unpacks as (rho, A, p, profile)
        return iter((self.rho, self.A, self.p, self))


def slab_exact_root(lam: float, q: float, L: float) -> SlabRootProfile:
    """Exact dead-core solution of ``-w'' + lam w^q = 0``, ``w(+-L) = 1``.

    Raises
    ------
    NoDeadCore
        If ``L`` is below the threshold ``Psi(1) = sqrt(2(1+q)/lam)/(1-q)``.
    """
    _check_root_params(lam, q)
    threshold = root_threshold(lam, q)
    if L < threshold * (1.0 - 1e-12):
        raise NoDeadCore(f"L = {L} is below the dead-core threshold Psi(1) = {threshold:.12g}")
    p = 2.0 / (1.0 - q)
    A = (lam * (1.0 - q) ** 2 / (2.0 * (1.0 + q))) ** (1.0 / (1.0 - q))
    rho = max(L - threshold, 0.0)
    return SlabRootProfile(lam, q, L, rho, A, p)


@dataclass(frozen=True)
class SlabLinearProfile:
    """``w(x) = cosh(x)/cosh(L)``, the solution of ``-w'' + w = 0``, ``w(+-L) = 1``."""

    L: float

    def __call__(self, x):
        return np.cosh(np.asarray(x, dtype=float)) / math.cosh(self.L)

    def derivative(self, x):
        return np.sinh(np.asarray(x, dtype=float)) / math.cosh(self.L)

    @property
    def derivative_at_L(self) -> float:
        return math.tanh(self.L)


def slab_exact_linear(L: float) -> SlabLinearProfile:
    if not L > 0.0:
        raise ValueError("L must be positive")
    return SlabLinearProfile(float(L))


def euler_exponent(q: float) -> float:
    """Positive indicial root ``s+ = (1 + sqrt(1 + 4 q p (p-1)))/2`` with ``p = 2/(1-q)``."""
    p = 2.0 / (1.0 - q)
    return 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * q * p * (p - 1.0)))


@dataclass(frozen=True)
class SlabVProfile:
    """``v(x) = c ((|x| - rho)/(L - rho))^s`` for ``|x| > rho``, zero on the core.

    ``c`` is the value at ``x = L``; ``c_left`` the value at ``x = -L``.
    """

    rho: float
    L: float
    exponent: float
    c: float
    c_left: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        s = np.maximum(np.abs(x) - self.rho, 0.0) / (self.L - self.rho)
        return np.where(x >= 0.0, self.c, self.c_left) * s ** self.exponent

    def second_derivative(self, x):
        x = np.asarray(x, dtype=float)
        k = self.exponent
        s = np.maximum(np.abs(x) - self.rho, 0.0)
        scale = np.where(x >= 0.0, self.c, self.c_left) / (self.L - self.rho) ** k
        return scale * k * (k - 1.0) * s ** (k - 2.0)


def slab_exact_v_root(lam: float, q: float, L: float, c: float, c_left: float | None = None) -> SlabVProfile:
    """Bounded solution of ``-v'' + beta'(w) v = 0`` off the core, ``v = 0`` on it.

    ``v(L) = c`` and ``v(-L) = c_left`` (defaults to ``c``).
    """
    base = slab_exact_root(lam, q, L)
    if base.rho == 0.0:
        raise NoDeadCore("the dead core degenerates to a point; the core interface is undefined")
    return SlabVProfile(base.rho, float(L), euler_exponent(q), float(c),
                        float(c if c_left is None else c_left))


@dataclass(frozen=True)
class RadialProfile:
    radii: np.ndarray
    values: np.ndarray
    dead_core_radius: float | None
    derivative_at_R: float
    dim_n: int

    def __call__(self, r):
        return np.interp(np.asarray(r, dtype=float), self.radii, self.values)


def radial_solve(R: float, kin: Kinetic, dim_n: int = 2, tol: float = DEFAULT_TOL,
                 n_cells: int = 4000, f: float = 0.0, eps_dc: float | None = None) -> RadialProfile:
    """Radially symmetric solution of ``-Lap w + beta(w) = f`` in the ``dim_n``-ball, ``w(R) = 1``.

    Conservative finite differences on a uniform radial grid: face fluxes
    carry the weight ``r^(n-1)`` and the control volume at ``r = 0`` is the
    half cell, which encodes ``w'(0) = 0``. Solved with the same damped
    Newton iteration as the mesh solver.

    Raises
    ------
    NoConvergence
    """
    if dim_n < 1:
        raise ValueError("dim_n must be at least 1")
    if not R > 0.0:
        raise ValueError("R must be positive")
    n = int(n_cells)
    r = np.linspace(0.0, R, n + 1)
    dr = R / n
    faces = 0.5 * (r[:-1] + r[1:])
    weight = faces ** (dim_n - 1) / dr
    edges = np.concatenate([[0.0], faces, [R]])
    volume = (edges[1:] ** dim_n - edges[:-1] ** dim_n) / dim_n
    main = np.zeros(n + 1)
    main[:-1] += weight
    main[1:] += weight
    K = sp.diags([-weight, main, -weight], [-1, 0, 1], format="csr")
    x0 = np.ones(n + 1)
    source = np.full(n + 1, float(f))
    x, res, n_it, fp_it, method, _ = _solve_nonlinear(K, volume, source, kin, _plain_reaction, x0, [n],
                                                      tol, 200, 2000)
    if res > tol:
        raise NoConvergence(f"radial solve: residual {res:.3e} > tol {tol:.1e}")
    if eps_dc is None:
        from .dead_core import default_threshold

        eps_dc = default_threshold(dr, tol, kin)
    core = np.flatnonzero(x <= eps_dc)
    radius = float(r[core.max()]) if core.size else None
    deriv = (3.0 * x[-1] - 4.0 * x[-2] + x[-3]) / (2.0 * dr)
    return RadialProfile(r, x, radius, float(deriv), int(dim_n))


def blowup_constants(profile: RadialProfile, kin: Kinetic, band: float, skip: float = 0.0):
    """Range of ``beta'(w) d^2`` over ``skip < d <= band`` outside the core.

    Returns ``(min, max)``; the two-sided blow-up bound holds with
    ``C = max(max, 1/min)``.
    """
    if profile.dead_core_radius is None:
        raise NoDeadCore("the radial profile has no dead core")
    d = profile.radii - profile.dead_core_radius
    mask = (d > skip) & (d <= band)
    vals = np.asarray(kin.derivative(profile.values[mask]), dtype=float) * d[mask] ** 2
    return float(vals.min()), float(vals.max())


def slab_residual(profile, kin: Kinetic, h: float) -> float:
    """Max nodal residual of the mesh scheme applied to an exact slab profile.

    Interior rows only, scaled by ``1/h`` so it approximates ``-w'' + beta(w)``.
    """
    mesh = build_slab_mesh(profile.L, h)
    x = mesh.nodes[:, 0]
    w = profile(x)
    r = (mesh.laplacian @ w) / mesh.lumped_mass + np.asarray(kin.value(w))
    interior = np.ones(mesh.n_nodes, dtype=bool)
    interior[mesh.boundary_nodes] = False
    return float(np.max(np.abs(r[interior])))


__all__ = [
    "RadialProfile",
    "SlabLinearProfile",
    "SlabRootProfile",
    "SlabVProfile",
    "blowup_constants",
    "euler_exponent",
    "radial_solve",
    "root_threshold",
    "slab_exact_linear",
    "slab_exact_root",
    "slab_exact_v_root",
    "slab_residual",
]
