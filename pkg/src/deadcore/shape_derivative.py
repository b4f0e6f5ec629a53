"""Shape derivatives of the state: linearized problem, difference quotients, and
the truncated-kinetics sequence.

For ``-Lap w + beta(w) = f`` in ``Omega``, ``w = 1`` on the boundary, the
derivative ``v`` of ``w`` along ``(I + tau theta) Omega`` solves

    -Lap v + beta'(w) v = 0 in Omega,   v = -grad w . theta on the boundary.

In the ``u = 1 - w`` form the derivative is ``-v``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dead_core import detect
from .elliptic import (
    DEFAULT_TOL,
    boundary_flux,
    nodal_source,
    norms,
    recovered_gradient,
    solve_linear_potential,
    solve_semilinear,
    solve_semilinear_u,
    solve_transported,
    weighted_l2,
)
from .errors import HypothesisViolated
from .fields import FieldKind, ScalarField
from .geometry import (
    Mesh,
    PerturbationField,
    distance_to_nodeset,
    interpolate,
    perturb_mesh,
)
from .kinetics import Kinetic, Smoothness, mollify, truncate


@dataclass
class ShapeDerivativeResult:
    v: ScalarField
    boundary_data: dict
    residual: float
    frozen_nodes: np.ndarray

    @property
    def u_derivative(self) -> ScalarField:
        """Derivative of ``u = 1 - w``."""
        return (-self.v).renamed("du")


@dataclass
class ConvergenceReport:
    """One row per parameter value; columns in ``errors``; boolean checks in ``flags``."""

    parameter: str
    values: list
    errors: dict = field(default_factory=dict)
    slope: float | None = None
    flags: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name, col in self.errors.items():
            if len(col) != len(self.values):
                raise ValueError(f"column {name!r} has {len(col)} entries for {len(self.values)} parameters")

    def add_column(self, name: str, col):
        self.errors[name] = [float(c) for c in col]
        self.validate()

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def rows(self):
        header = [self.parameter] + list(self.errors)
        body = [[self.values[i]] + [self.errors[k][i] for k in self.errors] for i in range(len(self.values))]
        return header, body

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "values": list(self.values),
            "errors": {k: list(v) for k, v in self.errors.items()},
            "slope": self.slope,
            "flags": dict(self.flags),
            "notes": list(self.notes),
        }


def _map(fn, items, jobs: int):
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _boundary_gradient(state: ScalarField, reaction_values, source, recovery: str) -> np.ndarray:
    """Full gradient at ``mesh.boundary_nodes``, shape ``(nb, d)``."""
    mesh = state.mesh
    bnd = mesh.boundary_nodes
    if recovery == "flux":
        # Dirichlet data is constant, so the gradient is purely normal
        dn = boundary_flux(mesh, state.values, reaction_values, source)
        return dn[:, None] * mesh.boundary_node_normals[bnd]
    if recovery == "average":
        return recovered_gradient(state)[bnd]
    raise ValueError(f"unknown recovery {recovery!r}")


def _boundary_values(state, theta, reaction_values, source, recovery):
    mesh = state.mesh
    bnd = mesh.boundary_nodes
    grad = _boundary_gradient(state, reaction_values, source, recovery)
    th = np.asarray(theta.value(mesh.nodes[bnd]), dtype=float).reshape(len(bnd), mesh.dim)
    return -np.einsum("nd,nd->n", grad, th)


def boundary_data(w: ScalarField, theta: PerturbationField, kin: Kinetic | None = None, f=0.0,
                  recovery: str | None = None) -> dict:
    """Nodal ``-grad w . theta`` on the boundary, keyed by node index.

    ``recovery="flux"`` (default when ``kin`` is given) reads the normal
    derivative off the discrete residual of the state equation and is
    second-order accurate; ``"average"`` averages adjacent element gradients
    and is first order at the boundary.
    """
    if recovery is None:
        recovery = "flux" if kin is not None else "average"
    reaction = np.asarray(kin.value(np.asarray(w.values)), dtype=float) if kin is not None else None
    vals = _boundary_values(w, theta, reaction, nodal_source(w.mesh, f), recovery)
    return {int(i): float(v) for i, v in zip(w.mesh.boundary_nodes, vals)}


def _linearized(state, theta, reaction_values, potential, source, frozen, tol, recovery):
    mesh = state.mesh
    frozen = np.asarray(sorted(set(int(i) for i in frozen)), dtype=np.int64)
    V = np.array(potential, dtype=float)
    V[frozen] = np.inf
    g = _boundary_values(state, theta, reaction_values, source, recovery)
    g[np.isin(mesh.boundary_nodes, frozen)] = 0.0
    v = solve_linear_potential(mesh, ScalarField(mesh, V, FieldKind.POTENTIAL, "V"), g, frozen, tol)
    free = np.ones(mesh.n_nodes, dtype=bool)
    free[mesh.boundary_nodes] = False
    free[frozen] = False
    r = mesh.laplacian @ v.values
    r[free] += mesh.lumped_mass[free] * V[free] * v.values[free]
    residual = float(np.linalg.norm(r[free]))
    bd = {int(i): float(x) for i, x in zip(mesh.boundary_nodes, g)}
    return ShapeDerivativeResult(v, bd, residual, frozen)


def solve_v(mesh: Mesh, w: ScalarField, kin: Kinetic, theta: PerturbationField, frozen=None,
            tol: float = DEFAULT_TOL, f=0.0, recovery: str = "flux") -> ShapeDerivativeResult:
    """Shape derivative ``v`` of ``w`` from the linearized problem.

    Parameters
    ----------
    frozen : iterable of int, optional
        Nodes where ``v = 0`` is imposed. Defaults to the detected dead core
        for kinetics singular at zero and to the empty set otherwise.
    """
    if frozen is None:
        frozen = detect(w, tol=tol, kin=kin).nodes if kin.smoothness is Smoothness.SINGULAR_AT_ZERO else ()
    wv = np.asarray(w.values)
    frozen_mask = np.zeros(mesh.n_nodes, dtype=bool)
    frozen_mask[np.asarray(list(frozen), dtype=np.int64)] = True
    potential = np.where(frozen_mask, 0.0, np.asarray(kin.derivative(wv), dtype=float))
    reaction = np.asarray(kin.value(wv), dtype=float)
    return _linearized(w, theta, reaction, potential, nodal_source(mesh, f), frozen, tol, recovery)


def solve_v_u(mesh: Mesh, u: ScalarField, kin: Kinetic, theta: PerturbationField, frozen=(),
              tol: float = DEFAULT_TOL, f=0.0, recovery: str = "flux") -> ShapeDerivativeResult:
    """Derivative of ``u`` from the ``u``-form linearization with ``g'(u) = beta'(1 - u)``."""
    uv = np.asarray(u.values)
    potential = np.asarray(kin.derivative(1.0 - uv), dtype=float)
    reaction = kin.beta_one - np.asarray(kin.value(1.0 - uv), dtype=float)
    source = kin.beta_one - nodal_source(mesh, f)
    return _linearized(u, theta, reaction, potential, source, frozen, tol, recovery)


def sign_relation_check(mesh: Mesh, kin: Kinetic, f, theta: PerturbationField,
                        tol: float = DEFAULT_TOL) -> float:
    """``max |v_u + v_w|`` between the two linearizations (they differ only by sign)."""
    w, _ = solve_semilinear(mesh, kin, f, tol=tol)
    u, _ = solve_semilinear_u(mesh, kin, f, tol=tol)
    v_w = solve_v(mesh, w, kin, theta, frozen=(), tol=tol, f=f).v
    v_u = solve_v_u(mesh, u, kin, theta, frozen=(), tol=tol, f=f).v
    return float(np.max(np.abs(v_u.values + v_w.values)))


def finite_difference_derivative(mesh: Mesh, kin: Kinetic, f, theta: PerturbationField, tau: float,
                                 tol: float = DEFAULT_TOL, u0: ScalarField | None = None):
    """Transported and extended difference quotients at step ``tau``.

    Returns
    -------
    dU : ScalarField
        ``(U_tau - u_0)/tau`` on the fixed mesh.
    du_extended : ScalarField
        ``(u_tau^ext - u_0)/tau`` where ``u_tau^ext`` is the solution on the
        moved mesh interpolated back to the reference nodes, zero outside the
        moved domain.
    """
    if u0 is None:
        u0, _ = solve_semilinear_u(mesh, kin, f, tol=tol)
    U, _ = solve_transported(mesh, theta, tau, kin, f, tol=tol)
    dU = ScalarField(mesh, (U.values - u0.values) / tau, FieldKind.DERIVED, "dU")
    moved = perturb_mesh(mesh, theta, tau)
    u_tau, _ = solve_semilinear_u(moved, kin, f, tol=tol)
    ext = interpolate(u_tau, mesh.nodes, fill=0.0)
    du = ScalarField(mesh, (ext - u0.values) / tau, FieldKind.DERIVED, "du_extended")
    return dU, du


def _fit_slope(x, y):
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def _decreasing_to_floor(errors, floor):
    return all(b <= a or b <= 2.0 * floor for a, b in zip(errors, errors[1:]))


def gateaux_check(mesh: Mesh, kin: Kinetic, f, theta: PerturbationField, tau_list,
                  tol: float = DEFAULT_TOL, interior_distance: float = 0.2,
                  floor_delta: float = 1e-6, jobs: int = 1) -> ConvergenceReport:
    """Difference quotients against the linearized derivative.

    Columns
    -------
    transported : ``||dU(tau) - (v_u + grad u . theta)||_L2``
    extended : ``||du_ext(tau) + v_w||_L2`` on nodes at distance
        ``>= interior_distance`` from the boundary
    to_discrete_limit : ``||dU(tau) - dU(floor_delta)||_L2``

    The mesh floor is ``||dU(floor_delta) - (v_u + grad u . theta)||``, the
    error left when the step is negligible. The slope is fitted on
    ``transported`` over steps whose error exceeds ten floors.
    """
    taus = [float(t) for t in tau_list]
    if any(t <= 0 for t in taus) or any(b >= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau values must be positive and decreasing")
    w, _ = solve_semilinear(mesh, kin, f, tol=tol)
    u, _ = solve_semilinear_u(mesh, kin, f, tol=tol)
    v_w = solve_v(mesh, w, kin, theta, frozen=(), tol=tol, f=f).v
    v_u = solve_v_u(mesh, u, kin, theta, frozen=(), tol=tol, f=f).v
    th = np.asarray(theta.value(mesh.nodes), dtype=float).reshape(mesh.n_nodes, mesh.dim)
    ref = np.asarray(v_u.values) + np.einsum("nd,nd->n", recovered_gradient(u), th)
    ref[mesh.boundary_nodes] = 0.0
    ref_field = ScalarField(mesh, ref, FieldKind.DERIVED, "dU_ref")
    interior = distance_to_nodeset(mesh, mesh.boundary_nodes).values >= interior_distance

    # one-sided: for a kink the map is only directionally differentiable
    Up, _ = solve_transported(mesh, theta, floor_delta, kin, f, tol=tol)
    limit = ScalarField(mesh, (Up.values - u.values) / floor_delta, FieldKind.DERIVED)
    floor = weighted_l2(limit - ref_field)

    def member(tau):
        dU, du = finite_difference_derivative(mesh, kin, f, theta, tau, tol, u0=u)
        return (weighted_l2(dU - ref_field), weighted_l2(du + v_w, interior),
                weighted_l2(dU - limit))

    out = _map(member, taus, jobs)
    report = ConvergenceReport("tau", taus)
    report.add_column("transported", [o[0] for o in out])
    report.add_column("extended", [o[1] for o in out])
    report.add_column("to_discrete_limit", [o[2] for o in out])
    report.add_column("mesh_floor", [floor] * len(taus))
    err = report.errors["transported"]
    above = [i for i, e in enumerate(err) if e >= 10.0 * floor and e > 0.0]
    if len(above) >= 2:
        report.slope = _fit_slope([taus[i] for i in above], [err[i] for i in above])
    else:
        report.notes.append("fewer than two steps above ten mesh floors; no slope fitted")
    report.flags["transported_decreasing_to_floor"] = _decreasing_to_floor(err, floor)
    report.notes.append(f"mesh floor {floor:.3e} from a forward quotient at {floor_delta:g}")
    return report


def _check_truncation_hypothesis(mesh, kin, f):
    fv = nodal_source(mesh, f)
    b1 = kin.beta_one
    if np.any(fv < 0.0) or np.any(fv > b1):
        raise HypothesisViolated(f"source must satisfy 0 <= f <= beta(1) = {b1:g} at every node")


def truncated_shape_sequence(mesh: Mesh, kin: Kinetic, f, theta: PerturbationField, m_list,
                             tol: float = DEFAULT_TOL, eps_dc: float | None = None,
                             far_distance: float = 0.5, jobs: int = 1):
    """Shape derivatives ``v_m`` for the truncated kinetics ``beta_m' = min(m, beta')``.

    The weak limit of ``v_m`` is not observable directly, so the report checks
    its computable consequences against ``v_inf``, the derivative with the
    detected dead core frozen:

    * ``w_monotone``: ``w_m`` nonincreasing in ``m`` within ``10 tol``
    * ``h1_bounded``: ``max/min`` of ``||v_m||_H1`` at most 10
    * ``energy_bounded``: ``max/min`` of ``int beta_m'(w_m) v_m^2`` at most 10
    * ``core_vanishing``: ``max |v_m|`` over the core nonincreasing, last ``<= 5h``
    * ``approaches_limit``: ``||v_m - v_inf||_L2`` decreasing

    Returns
    -------
    report : ConvergenceReport
    members : list of (w_m, v_m)
    limit : ShapeDerivativeResult for ``v_inf``
    region : detected dead core of the untruncated state

    Raises
    ------
    HypothesisViolated
        If ``f`` leaves ``[0, beta(1)]`` at some node.
    """
    ms = [float(m) for m in m_list]
    if any(b <= a for a, b in zip(ms, ms[1:])):
        raise ValueError("m values must be increasing")
    _check_truncation_hypothesis(mesh, kin, f)
    w, _ = solve_semilinear(mesh, kin, f, tol=tol)
    region = detect(w, eps_dc, tol, kin)
    limit = solve_v(mesh, w, kin, theta, frozen=region.nodes, tol=tol, f=f)
    v_inf = limit.v
    core = region.mask
    far = region.distance.values >= far_distance if not region.is_empty else np.ones(mesh.n_nodes, bool)

    def member(m):
        km = truncate(kin, m)
        wm, _ = solve_semilinear(mesh, km, f, tol=tol)
        vm = solve_v(mesh, wm, km, theta, frozen=(), tol=tol, f=f).v
        return wm, vm, km

    out = _map(member, ms, jobs)
    M = mesh.lumped_mass
    report = ConvergenceReport("m", ms)
    report.add_column("w_max_on_core", [float(np.max(o[0].values[core])) if core.any() else 0.0 for o in out])
    report.add_column("w_at_origin", [float(o[0].values[np.argmin(np.linalg.norm(mesh.nodes, axis=1))]) for o in out])
    report.add_column("h1_v", [norms(o[1]).H1 for o in out])
    report.add_column("energy", [float(M @ (np.asarray(o[2].derivative(o[0].values)) * o[1].values ** 2)) for o in out])
    report.add_column("core_sup_v", [float(np.max(np.abs(o[1].values[core]))) if core.any() else 0.0 for o in out])
    report.add_column("l2_to_limit", [weighted_l2(o[1] - v_inf) for o in out])
    report.add_column("far_sup_to_limit", [float(np.max(np.abs((o[1] - v_inf).values[far]))) for o in out])

    ws = [o[0].values for o in out]
    report.flags["w_monotone"] = all(np.all(b <= a + 10.0 * tol) for a, b in zip(ws, ws[1:]))
    h1 = report.errors["h1_v"]
    report.flags["h1_bounded"] = min(h1) > 0 and max(h1) / min(h1) <= 10.0
    en = report.errors["energy"]
    report.flags["energy_bounded"] = min(en) > 0 and max(en) / min(en) <= 10.0
    cs = report.errors["core_sup_v"]
    h = mesh.h_max
    report.flags["core_vanishing"] = all(b <= a for a, b in zip(cs, cs[1:])) and cs[-1] <= 5.0 * h
    l2 = report.errors["l2_to_limit"]
    report.flags["approaches_limit"] = all(b < a for a, b in zip(l2, l2[1:]))
    if not report.flags["approaches_limit"]:
        report.notes.append("v_m does not approach the frozen-core derivative monotonically; "
                            "the limit may not be unique")
    report.notes.append("weak H1 convergence is checked through norm bounds, L2 distance to the "
                        "frozen-core derivative and vanishing on the core")
    members = [(o[0], o[1]) for o in out]
    return report, members, limit, region


def kinetic_perturbation_study(mesh: Mesh, kin: Kinetic, f, theta: PerturbationField, n_list,
                               tol: float = DEFAULT_TOL, floor: float | None = None,
                               jobs: int = 1) -> ConvergenceReport:
    """Sensitivity of ``w`` and ``v`` to mollifying the kinetic.

    Columns: certified gap ``||beta_n - beta||``, ``||w_n - w||_H1`` and its
    ratio to the gap, the H2-surrogate analogue, and ``||v_n - v||_L2``.
    ``ratio_bounded`` requires ``max/min`` of the H1 ratio at most 10;
    ``v_decreasing_to_floor`` requires each ``v`` error to shrink or sit
    below ``2 floor`` (default floor ``1e3 tol``).
    """
    if kin.lipschitz_bound is None or not math.isfinite(kin.lipschitz_bound):
        raise ValueError("kinetic perturbation needs a finite Lipschitz bound")
    ns = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("n values must be increasing")
    if floor is None:
        floor = 1e3 * tol
    w, _ = solve_semilinear(mesh, kin, f, tol=tol)
    v = solve_v(mesh, w, kin, theta, frozen=(), tol=tol, f=f).v

    def member(n):
        kn = mollify(kin, n)
        wn, _ = solve_semilinear(mesh, kn, f, tol=tol)
        vn = solve_v(mesh, wn, kn, theta, frozen=(), tol=tol, f=f).v
        nrm = norms(wn - w)
        return kn.sup_gap, nrm.H1, nrm.H2_surrogate, weighted_l2(vn - v)

    out = _map(member, ns, jobs)
    report = ConvergenceReport("n", ns)
    gaps = [o[0] for o in out]
    report.add_column("gap", gaps)
    report.add_column("h1_error", [o[1] for o in out])
    report.add_column("h1_ratio", [o[1] / o[0] if o[0] > 0 else math.nan for o in out])
    report.add_column("h2s_error", [o[2] for o in out])
    report.add_column("h2s_ratio", [o[2] / o[0] if o[0] > 0 else math.nan for o in out])
    report.add_column("v_l2_error", [o[3] for o in out])
    ratio = report.errors["h1_ratio"]
    usable = all(math.isfinite(r) and r > 0 for r in ratio)
    report.flags["ratio_bounded"] = usable and max(ratio) / min(ratio) <= 10.0
    if not usable:
        report.notes.append("some members have a zero gap or an unchanged state; "
                            "the ratio is undefined there")
    report.flags["v_decreasing_to_floor"] = _decreasing_to_floor(report.errors["v_l2_error"], floor)
    if all(e > 0 for e in report.errors["h1_error"]):
        report.slope = _fit_slope(gaps, report.errors["h1_error"])
    report.notes.append("H2 column uses the discrete-Laplacian surrogate, not a true H2 norm")
    return report
