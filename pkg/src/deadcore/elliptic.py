"""Piecewise-linear Galerkin discretization of -div(A grad w) + beta(w) = f.

Reaction and source terms use nodal (lumped) quadrature, so the discrete
problem reads ``K w + M beta(w) = M f`` with a diagonal ``M``. On meshes whose
stiffness matrix has nonpositive off-diagonals this is a monotone scheme and
keeps the discrete maximum principle.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    InvalidKinetic,
    NoConvergence,
    NonSPDCoefficient,
    SingularSystem,
    UnfrozenInfinitePotential,
)
from .fields import FieldKind, ScalarField
from .geometry import Mesh, PerturbationField, transported_coefficients, zero_field
from .kinetics import Kinetic, Smoothness, truncate

logger = logging.getLogger(__name__)

# caps for beta' in Jacobians and the fixed-point modulus; residuals use the exact beta.
# The large Newton cap keeps nodes at the zero of a singular reaction from being pulled up.
DERIVATIVE_CAP = 1.0 / math.sqrt(np.finfo(float).eps)
NEWTON_SLOPE_CAP = 1e150
DEFAULT_TOL = 1e-10
BOUNDARY_FRACTION = 0.01
# derivative caps of the truncated kinetics used to warm-start singular solves
CONTINUATION_LEVELS = (1e1, 1e2, 1e3, 1e4, 1e5, 1e6)


def assemble_stiffness(mesh: Mesh, A: Callable | None = None) -> sp.csr_matrix:
    """Galerkin stiffness matrix with ``A`` evaluated at element barycenters.

    ``A`` maps ``(E, d)`` points to ``(E, d, d)`` symmetric matrices; ``None``
    means the identity.
    """
    d = mesh.dim
    if A is None:
        coef = np.broadcast_to(np.eye(d), (mesh.n_elements, d, d))
    else:
        coef = np.asarray(A(mesh.barycenters), dtype=float)
        if coef.shape != (mesh.n_elements, d, d):
            raise ValueError(f"A must return shape {(mesh.n_elements, d, d)}")
        eig = np.linalg.eigvalsh(0.5 * (coef + coef.transpose(0, 2, 1)))
        if np.any(eig[:, 0] <= 0.0):
            bad = int(np.argmin(eig[:, 0]))
            raise NonSPDCoefficient(
                f"diffusion matrix not positive definite at element {bad} "
                f"(min eigenvalue {eig[bad, 0]:.3e})")
    grads = mesh.basis_gradients
    local = mesh.element_measures[:, None, None] * ((grads @ coef) @ grads.transpose(0, 2, 1))
    el = mesh.elements
    nloc = el.shape[1]
    rows = np.repeat(el, nloc, axis=1).ravel()
    cols = np.tile(el, (1, nloc)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return K.tocsr()


def lumped_mass(mesh: Mesh, weight: Callable | None = None) -> np.ndarray:
    """Diagonal of the lumped mass matrix, optionally weighted at barycenters."""
    contrib = mesh.element_measures / (mesh.dim + 1)
    if weight is not None:
        contrib = contrib * np.asarray(weight(mesh.barycenters), dtype=float)
    return np.bincount(mesh.elements.ravel(), weights=np.repeat(contrib, mesh.dim + 1),
                       minlength=mesh.n_nodes)


def nodal_source(mesh: Mesh, f) -> np.ndarray:
    """Nodal values of a source given as constant, callable, array or field."""
    if isinstance(f, ScalarField):
        return np.array(f.values, dtype=float)
    if callable(f):
        return np.asarray(f(mesh.nodes), dtype=float).reshape(mesh.n_nodes)
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.n_nodes, float(arr))
    if arr.shape != (mesh.n_nodes,):
        raise ValueError("nodal source has the wrong length")
    return arr.copy()


@dataclass
class SolverReport:
    iterations: int
    final_residual: float
    converged: bool
    bounds_ok: bool
    method: str = "newton"
    newton_iterations: int = 0
    fixed_point_iterations: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class _Reaction(NamedTuple):
    value: Callable
    derivative: Callable
    antiderivative: Callable


def _u_form_reaction(kin: Kinetic) -> _Reaction:
    b1 = kin.beta_one
    B1 = float(kin.antiderivative(1.0))
    return _Reaction(
        lambda u: b1 - np.asarray(kin.value(1.0 - u), dtype=float),
        lambda u: np.asarray(kin.derivative(1.0 - u), dtype=float),
        lambda u: b1 * u + np.asarray(kin.antiderivative(1.0 - u), dtype=float) - B1,
    )


def _level(func, target, start, direction):
    """Extreme ``s`` on the ``direction`` side of ``start`` with ``func(s)`` on the right side of ``target``.

    ``direction = -1`` returns ``sup{s <= start : func(s) <= target}``;
    ``direction = +1`` returns ``inf{s >= start : func(s) >= target}``.
    ``func`` is nondecreasing. Returns an infinity if no such ``s`` is found.
    """
    def ok(s):
        v = float(func(s))
        return v <= target if direction < 0 else v >= target

    if ok(start):
        return start
    step = 1.0
    far = start + direction * step
    while not ok(far):
        step *= 2.0
        if step > 1e12:
            return direction * math.inf
        far = start + direction * step
    near = start
    for _ in range(200):
        mid = 0.5 * (near + far)
        if mid == near or mid == far:
            break
        if ok(mid):
            far = mid
        else:
            near = mid
    return far


def constant_bounds(reaction, source, boundary_values):
    """Constant sub- and supersolution levels bracketing the discrete solution.

    A constant ``c`` below the boundary data with ``reaction(c) <= min f`` is a
    subsolution, and symmetrically for the supersolution.
    """
    lo = _level(reaction.value, float(np.min(source)), float(np.min(boundary_values)), -1)
    hi = _level(reaction.value, float(np.max(source)), float(np.max(boundary_values)), +1)
    return lo, hi


def is_m_matrix(K) -> bool:
    """True if every off-diagonal entry is nonpositive."""
    C = K.tocoo()
    off = C.data[C.row != C.col]
    return bool(off.size == 0 or off.max() <= 0.0)


def _newton(K, mass, source, reaction, x0, fixed, tol, max_iter, max_fixed_point,
            slope_cap=NEWTON_SLOPE_CAP):
    """Damped semismooth Newton with a monotone fixed-point fallback.

    Minimizes the convex energy
    ``1/2 x.Kx + sum M R(x) - sum M f x`` over the free nodes. When the
    stiffness matrix is an M-matrix the iterates are projected onto the
    constant sub/supersolution bracket, which removes the sign oscillation
    Newton otherwise shows at zeros of a singular reaction.
    """
    n = K.shape[0]
    fixed = np.asarray(fixed, dtype=np.int64)
    free = np.setdiff1d(np.arange(n), fixed)
    x = np.array(x0, dtype=float)
    Kc = K.tocsr()
    Kff = Kc[free][:, free].tocsc()
    Kfb = Kc[free][:, fixed]
    mf = mass[free]
    b = mf * source[free] - Kfb @ x[fixed]
    if is_m_matrix(Kc):
        lo, hi = constant_bounds(reaction, source[free], x[fixed])
    else:
        lo, hi = -math.inf, math.inf

    kdiag = Kff.diagonal()
    snap_level = 1e-3 * tol / math.sqrt(max(len(free), 1))

    def negligible(anchor, bound):
        # moving the node onto the bound changes its residual by less than snap_level
        gap = np.abs(anchor - bound)
        return kdiag * gap + mf * np.abs(reaction.value(anchor) - reaction.value(np.full_like(anchor, bound))) <= snap_level

    def project(z, anchor=None):
        if anchor is None:
            return np.clip(z, lo, hi)
        # keep a fixed fraction of the distance to each bound per step
        lower = lo + BOUNDARY_FRACTION * (anchor - lo) if math.isfinite(lo) else -math.inf
        upper = hi - BOUNDARY_FRACTION * (hi - anchor) if math.isfinite(hi) else math.inf
        out = np.clip(z, lower, upper)
        # overshooting nodes already within rounding of the bound land on it, which
        # ends the geometric creep toward the zero of a singular reaction
        if math.isfinite(lo):
            snap = (z < lower) & negligible(anchor, lo)
            out[snap] = lo
        if math.isfinite(hi):
            snap = (z > upper) & negligible(anchor, hi)
            out[snap] = hi
        return out

    def residual(z):
        return Kff @ z + mf * reaction.value(z) - b

    def energy(z):
        return 0.5 * z @ (Kff @ z) + mf @ reaction.antiderivative(z) - b @ z

    xf = project(x[free])
    F = residual(xf)
    res = float(np.linalg.norm(F))
    it = 0
    stalled = False
    while res > tol and it < max_iter:
        it += 1
        slope = np.minimum(reaction.derivative(xf), slope_cap)
        J = (Kff + sp.diags(mf * slope)).tocsc()
        step = spla.spsolve(J, -F)
        if not np.all(np.isfinite(step)):
            stalled = True
            break
        E0 = energy(xf)
        alpha = 1.0
        accepted = False
        for _ in range(60):
            trial = project(xf + alpha * step, xf)
            F_trial = residual(trial)
            res_trial = float(np.linalg.norm(F_trial))
            E1 = energy(trial)
            armijo = E1 <= E0 + 1e-4 * float(F @ (trial - xf))
            flat = abs(E1 - E0) <= 64.0 * np.finfo(float).eps * (abs(E0) + 1.0)
            if armijo or (flat and res_trial < res):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            stalled = True
            break
        xf, F, res = trial, F_trial, res_trial
        logger.debug("newton %d: residual %.3e, step length %.3g", it, res, alpha)

    newton_its = it
    fp_its = 0
    method = "newton"
    if res > tol and max_fixed_point > 0:
        method = "fixed_point"
        modulus = float(np.max(np.minimum(reaction.derivative(xf), DERIVATIVE_CAP)))
        modulus = max(modulus, 1.0)
        lu = spla.splu((Kff + sp.diags(modulus * mf)).tocsc())
        best, best_res = xf, res
        while res > tol and fp_its < max_fixed_point:
            fp_its += 1
            xf = project(lu.solve(mf * modulus * xf - mf * reaction.value(xf) + b))
            F = residual(xf)
            res = float(np.linalg.norm(F))
            if res < best_res:
                best, best_res = xf, res
        xf, res = best, best_res
    x[free] = xf
    return x, res, newton_its, fp_its, method, stalled


def _solve_nonlinear(K, mass, source, kin: Kinetic, to_reaction, x0, fixed, tol, max_iter, max_fixed_point,
                     slope_cap=NEWTON_SLOPE_CAP):
    """:func:`_newton`, retried through truncated kinetics if a singular solve fails.

    Near the zero of a root-type reaction Newton moves the free boundary by
    about one node per iteration. Warm-starting from the solutions for
    ``truncate(kin, m)`` with growing ``m`` places it first.
    """
    singular = kin.smoothness is Smoothness.SINGULAR_AT_ZERO
    out = _newton(K, mass, source, to_reaction(kin), x0, fixed, tol, max_iter,
                  0 if singular else max_fixed_point, slope_cap)
    if out[1] <= tol or not singular:
        return out
    x = np.array(x0, dtype=float)
    its = out[2] + out[3]
    for m in CONTINUATION_LEVELS:
        step = _newton(K, mass, source, to_reaction(truncate(kin, m)), x, fixed, tol, max_iter, 0, slope_cap)
        x = step[0]
        its += step[2]
    final = _newton(K, mass, source, to_reaction(kin), x, fixed, tol, max_iter, max_fixed_point, slope_cap)
    if final[1] >= out[1]:
        return out
    logger.debug("continuation through %d truncated kinetics", len(CONTINUATION_LEVELS))
    return final[0], final[1], its + final[2], final[3], "continuation", final[5]


def _plain_reaction(kin: Kinetic) -> _Reaction:
    return _Reaction(kin.value, kin.derivative, kin.antiderivative)


def _finish(mesh, x, res, newton_its, fp_its, method, tol, name):
    lo, hi = -10.0 * tol, 1.0 + 10.0 * tol
    report = SolverReport(
        iterations=newton_its + fp_its,
        final_residual=res,
        converged=res <= tol,
        bounds_ok=bool(np.all(x >= lo) and np.all(x <= hi)),
        method=method,
        newton_iterations=newton_its,
        fixed_point_iterations=fp_its,
    )
    field = ScalarField(mesh, x, FieldKind.SOLUTION, name)
    if not report.converged:
        raise NoConvergence(
            f"{name}: residual {res:.3e} > tol {tol:.1e} after {report.iterations} iterations",
            report, field)
    return field, report


def _check_kinetic(kin: Kinetic):
    b0 = kin.value(0.0)
    if b0 != 0.0:
        raise InvalidKinetic(f"beta(0) = {b0!r}, expected exactly 0")


def solve_semilinear(mesh: Mesh, kin: Kinetic, f=0.0, bc: float = 1.0, tol: float = DEFAULT_TOL,
                     max_iter: int = 200, max_fixed_point: int = 2000):
    """Solve ``-Lap w + beta(w) = f`` with ``w = bc`` on the boundary.

    Parameters
    ----------
    mesh : Mesh
    kin : Kinetic
        Nondecreasing with ``beta(0) = 0``; ``beta'`` may be infinite.
    f : float, callable, array or ScalarField
        Source term, evaluated at the nodes.
    bc : float
        Constant Dirichlet value.
    tol : float
        Bound on the Euclidean norm of the nonlinear residual.

    Returns
    -------
    w : ScalarField
    report : SolverReport

    Raises
    ------
    NoConvergence
        With the last iterate and its report attached.
    """
    _check_kinetic(kin)
    source = nodal_source(mesh, f)
    K = mesh.laplacian
    x0 = np.full(mesh.n_nodes, float(bc))
    out = _solve_nonlinear(K, mesh.lumped_mass, source, kin, _plain_reaction, x0, mesh.boundary_nodes,
                           tol, max_iter, max_fixed_point)
    x, res, n_it, fp_it, method, _ = out
    return _finish(mesh, x, res, n_it, fp_it, method, tol, "w")


def _transported_system(mesh: Mesh, theta: PerturbationField, tau: float, f):
    tc = transported_coefficients(theta, f if not isinstance(f, (ScalarField, np.ndarray)) else 0.0,
                                  tau)
    K = assemble_stiffness(mesh, tc.A)
    mass = lumped_mass(mesh, tc.J)
    if isinstance(f, (ScalarField, np.ndarray)):
        if tau != 0.0:
            raise ValueError("a nodal source cannot be transported; pass a callable or constant")
        source = nodal_source(mesh, f)
    else:
        source = tc.f_pullback(mesh.nodes)
    return K, mass, source


def solve_transported(mesh: Mesh, theta: PerturbationField, tau: float, kin: Kinetic, f=0.0,
                      tol: float = DEFAULT_TOL, max_iter: int = 200, max_fixed_point: int = 2000):
    """Solve the ``u`` problem of ``(I + tau theta) Omega`` pulled back to ``mesh``.

    Discretizes ``int A_tau grad U grad phi + int g(U) phi J_tau = int fhat_tau phi J_tau``
    with ``g(u) = beta(1) - beta(1 - u)`` and ``fhat = beta(1) - f``.
    At ``tau = 0`` this is exactly :func:`solve_semilinear_u`.
    """
    _check_kinetic(kin)
    K, mass, source = _transported_system(mesh, theta, tau, f)
    fhat = kin.beta_one - source
    x0 = np.zeros(mesh.n_nodes)
    # in u the zero of w sits at u = 1, where doubles are spaced 1e-16 apart and a
    # steep Jacobian pins nodes to u = 1; the moderate cap lets them settle
    out = _solve_nonlinear(K, mass, fhat, kin, _u_form_reaction, x0, mesh.boundary_nodes, tol,
                           max_iter, max_fixed_point, DERIVATIVE_CAP)
    x, res, n_it, fp_it, method, _ = out
    return _finish(mesh, x, res, n_it, fp_it, method, tol, "U_tau")


def solve_semilinear_u(mesh: Mesh, kin: Kinetic, f=0.0, tol: float = DEFAULT_TOL, **kwargs):
    """Solve ``-Lap u + g(u) = beta(1) - f`` with ``u = 0`` on the boundary (``u = 1 - w``)."""
    u, report = solve_transported(mesh, zero_field(mesh.dim), 0.0, kin, f, tol, **kwargs)
    return u.renamed("u"), report


def _boundary_values(mesh: Mesh, g_bc) -> np.ndarray:
    bnd = mesh.boundary_nodes
    if callable(g_bc):
        return np.asarray(g_bc(mesh.nodes[bnd]), dtype=float).reshape(len(bnd))
    if isinstance(g_bc, dict):
        return np.array([float(g_bc[int(i)]) for i in bnd])
    arr = np.asarray(g_bc, dtype=float)
    if arr.ndim == 0:
        return np.full(len(bnd), float(arr))
    if arr.shape == (mesh.n_nodes,):
        return arr[bnd]
    if arr.shape == (len(bnd),):
        return arr
    raise ValueError("boundary data has the wrong length")


def solve_linear_potential(mesh: Mesh, V, g_bc, frozen=(), tol: float = DEFAULT_TOL) -> ScalarField:
    """Solve ``-Lap v + V v = 0`` with ``v = g_bc`` on the boundary and ``v = 0`` on ``frozen``.

    ``V`` may be ``inf`` exactly at frozen nodes.
    """
    Vv = np.array(V.values if isinstance(V, ScalarField) else V, dtype=float)
    if Vv.shape != (mesh.n_nodes,):
        raise ValueError("potential has the wrong length")
    if np.any(np.isnan(Vv)) or np.any(Vv < 0.0):
        raise ValueError("potential must be nonnegative")
    frozen = np.asarray(sorted(set(int(i) for i in frozen)), dtype=np.int64)
    is_frozen = np.zeros(mesh.n_nodes, dtype=bool)
    is_frozen[frozen] = True
    bad = np.flatnonzero(np.isinf(Vv) & ~is_frozen)
    if bad.size:
        raise UnfrozenInfinitePotential(
            f"{bad.size} node(s) carry an infinite potential but are not frozen (first: {bad[0]})")
    bnd = mesh.boundary_nodes
    gvals = _boundary_values(mesh, g_bc)
    clash = is_frozen[bnd] & (gvals != 0.0)
    if np.any(clash):
        raise ValueError("frozen nodes on the boundary need zero boundary data")
    v = np.zeros(mesh.n_nodes)
    v[bnd] = gvals
    fixed = np.union1d(bnd, frozen)
    free = np.setdiff1d(np.arange(mesh.n_nodes), fixed)
    if free.size == 0:
        return ScalarField(mesh, v, FieldKind.DERIVED, "v")
    K = mesh.laplacian
    Kff = K[free][:, free]
    rhs = -(K[free][:, fixed] @ v[fixed])
    mat = (Kff + sp.diags(mesh.lumped_mass[free] * Vv[free])).tocsc()
    try:
        sol = spla.splu(mat).solve(rhs)
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("linear solve produced non-finite values")
    resid = float(np.linalg.norm(mat @ sol - rhs))
    if resid > max(tol, 1e-10 * float(np.linalg.norm(rhs))):
        raise SingularSystem(f"linear residual {resid:.3e} exceeds tolerance")
    v[free] = sol
    return ScalarField(mesh, v, FieldKind.DERIVED, "v")


class Norms(NamedTuple):
    L2: float
    H1_semi: float
    H2_surrogate: float

    @property
    def H1(self) -> float:
        return math.hypot(self.L2, self.H1_semi)


def norms(field: ScalarField) -> Norms:
    """Discrete L2 (lumped), H1 seminorm (stiffness form) and an H2 surrogate.

    The surrogate is the lumped L2 norm of the discrete Laplacian
    ``M^-1 K v`` over interior nodes; it is a proxy, not an H2 norm.
    """
    mesh = field.mesh
    v = np.asarray(field.values, dtype=float)
    M = mesh.lumped_mass
    K = mesh.laplacian
    Kv = K @ v
    l2 = math.sqrt(max(float(M @ (v * v)), 0.0))
    h1 = math.sqrt(max(float(v @ Kv), 0.0))
    interior = np.ones(mesh.n_nodes, dtype=bool)
    interior[mesh.boundary_nodes] = False
    lap = Kv[interior] / M[interior]
    h2 = math.sqrt(float(M[interior] @ (lap * lap)))
    return Norms(l2, h1, h2)


def weighted_l2(field: ScalarField, mask=None) -> float:
    """Lumped L2 norm, optionally restricted to a boolean node mask."""
    v = np.asarray(field.values if isinstance(field, ScalarField) else field, dtype=float)
    M = field.mesh.lumped_mass if isinstance(field, ScalarField) else None
    if M is None:
        raise TypeError("weighted_l2 needs a ScalarField")
    if mask is not None:
        return math.sqrt(float(M[mask] @ (v[mask] ** 2)))
    return math.sqrt(float(M @ (v * v)))


def recovered_gradient(field: ScalarField) -> np.ndarray:
    """Nodal gradient: measure-weighted average of the adjacent element gradients."""
    mesh = field.mesh
    v = np.asarray(field.values)
    grads = np.einsum("ek,ekd->ed", v[mesh.elements], mesh.basis_gradients)
    w = mesh.element_measures
    out = np.zeros((mesh.n_nodes, mesh.dim))
    tot = np.zeros(mesh.n_nodes)
    for k in range(mesh.dim + 1):
        idx = mesh.elements[:, k]
        np.add.at(out, idx, grads * w[:, None])
        np.add.at(tot, idx, w)
    return out / tot[:, None]


def boundary_flux(mesh: Mesh, values, reaction_values, source) -> np.ndarray:
    """Outward normal derivative at boundary nodes from the discrete residual.

    With ``r = K v + M (reaction - source)``, the weak form gives
    ``r_b = int_boundary dv/dn phi_b``; dividing by ``int phi_b`` yields a
    nodal flux that is second-order accurate for smooth solutions. Returned
    as an array over ``mesh.boundary_nodes``.
    """
    v = np.asarray(values, dtype=float)
    r = mesh.laplacian @ v + mesh.lumped_mass * (np.asarray(reaction_values) - np.asarray(source))
    bnd = mesh.boundary_nodes
    return r[bnd] / mesh.boundary_weights[bnd]
