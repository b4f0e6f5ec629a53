import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deadcore.elliptic import (
    SolverReport,
    assemble_stiffness,
    is_m_matrix,
    lumped_mass,
    norms,
    solve_linear_potential,
    solve_semilinear,
    solve_semilinear_u,
    solve_transported,
    weighted_l2,
)
from deadcore.errors import (
    InvalidKinetic,
    NoConvergence,
    NonSPDCoefficient,
    SingularTransform,
    UnfrozenInfinitePotential,
)
from deadcore.fields import FieldKind, ScalarField
from deadcore.geometry import (
    build_disk_mesh,
    build_slab_mesh,
    dilation_field,
    perturb_mesh,
    shear_field,
    sine_field,
    zero_field,
)
from deadcore.kinetics import Kinetic, Smoothness, make_linear_kinetic, make_lipschitz_ramp, make_root_kinetic
from deadcore.oracle_1d import euler_exponent, slab_exact_root

from conftest import RHO, slab_cosh


# ---- stiffness

def test_stiffness_stencil_1d():
    h = 0.1
    m = build_slab_mesh(1.0, h)
    K = m.laplacian.toarray()
    i = m.n_nodes // 2
    assert np.allclose(K[i, i - 1:i + 2], np.array([-1, 2, -1]) / h, rtol=1e-12)


@pytest.mark.parametrize("mesh", [build_slab_mesh(1.0, 0.1), build_disk_mesh(1.0, 0.2)],
                         ids=["slab", "disk"])
def test_stiffness_symmetric_with_zero_row_sums(mesh):
    K = mesh.laplacian
    assert abs(K - K.T).max() == 0.0
    interior = np.setdiff1d(np.arange(mesh.n_nodes), mesh.boundary_nodes)
    assert np.allclose(np.asarray(K.sum(axis=1)).ravel()[interior], 0.0, atol=1e-12)


def test_stiffness_variable_coefficient_matches_constant(disk1):
    K = assemble_stiffness(disk1, lambda x: np.broadcast_to(2.0 * np.eye(2), (len(x), 2, 2)))
    assert abs(K - 2.0 * disk1.laplacian).max() < 1e-12


def test_stiffness_rejects_indefinite(disk1):
    with pytest.raises(NonSPDCoefficient):
        assemble_stiffness(disk1, lambda x: np.broadcast_to(np.diag([1.0, -1.0]), (len(x), 2, 2)))


def test_lumped_mass_sums_to_measure(disk1):
    assert lumped_mass(disk1).sum() == pytest.approx(disk1.total_measure, rel=1e-14)
    assert lumped_mass(disk1, lambda x: np.full(len(x), 3.0)).sum() == pytest.approx(
        3.0 * disk1.total_measure, rel=1e-14)


# ---- semilinear solves

@pytest.mark.parametrize("kin", [make_root_kinetic(1.0, 0.5), make_lipschitz_ramp(2.0, 0.5),
                                 make_linear_kinetic(1.0)], ids=["root", "ramp", "linear"])
def test_source_beta_one_gives_constant_one(kin, disk1):
    w, rep = solve_semilinear(disk1, kin, kin.beta_one, tol=1e-12)
    assert np.array_equal(w.values, np.ones(disk1.n_nodes))
    assert rep.converged and rep.bounds_ok
    u, _ = solve_semilinear_u(disk1, kin, kin.beta_one, tol=1e-12)
    assert np.array_equal(u.values, np.zeros(disk1.n_nodes))


def test_linear_slab_second_order():
    errs = []
    for h in (0.04, 0.02, 0.01):
        m = build_slab_mesh(2.0, h)
        w, _ = solve_semilinear(m, make_linear_kinetic(1.0), 0.0, tol=1e-12)
        errs.append(np.max(np.abs(w.values - slab_cosh(m.nodes[:, 0], 2.0))))
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


def test_root_slab_matches_closed_form(slab5, slab5_root_state):
    w, rep = slab5_root_state
    exact = slab_exact_root(1.0, 0.5, 5.0)
    assert exact.rho == pytest.approx(RHO, rel=1e-15)
    err = np.max(np.abs(w.values - exact(slab5.nodes[:, 0])))
    assert err <= 25 * 0.01 ** 2
    assert rep.converged and rep.bounds_ok and rep.final_residual <= 1e-12


@pytest.mark.parametrize("q", [0.2, 0.25, 1.0 / 3.0])
def test_small_exponent_root_converges(q):
    mesh = build_slab_mesh(5.0, 0.005)
    kin = make_root_kinetic(1.0, q)
    w, rep = solve_semilinear(mesh, kin, 0.0, tol=1e-12)
    assert rep.converged and rep.bounds_ok
    exact = slab_exact_root(1.0, q, 5.0)
    assert np.max(np.abs(w.values - exact(mesh.nodes[:, 0]))) <= 25 * 0.005 ** 2


def test_u_form_root_at_default_tolerance(slab5, root, slab5_root_state):
    w, _ = slab5_root_state
    u, rep = solve_semilinear_u(slab5, root, 0.0)
    assert rep.converged
    assert np.max(np.abs(u.values - (1 - w.values))) <= 1e-8


def test_invalid_kinetic(disk1):
    bad = Kinetic("shifted", lambda s: s + 1.0, lambda s: 1.0, lambda t: t, Smoothness.TWICE_SMOOTH, 1.0)
    with pytest.raises(InvalidKinetic):
        solve_semilinear(disk1, bad, 0.0)


def test_no_convergence_carries_report(slab2, root):
    with pytest.raises(NoConvergence) as info:
        solve_semilinear(slab2, root, 0.0, tol=1e-30, max_iter=3, max_fixed_point=3)
    assert isinstance(info.value.report, SolverReport)
    assert not info.value.report.converged
    assert info.value.field is not None


def test_report_to_dict(slab2, linear):
    _, rep = solve_semilinear(slab2, linear, 0.0)
    d = rep.to_dict()
    assert d["converged"] is True and d["final_residual"] <= 1e-10


def test_u_form_relation(slab2):
    for kin in (make_linear_kinetic(1.0), make_lipschitz_ramp(2.0, 0.5)):
        w, _ = solve_semilinear(slab2, kin, 0.3, tol=1e-12)
        u, _ = solve_semilinear_u(slab2, kin, 0.3, tol=1e-12)
        assert np.max(np.abs(u.values - (1 - w.values))) <= 1e-10


def test_u_form_linear_oracle(slab2, linear):
    u, _ = solve_semilinear_u(slab2, linear, 0.0, tol=1e-12)
    x = slab2.nodes[:, 0]
    assert np.max(np.abs(u.values - (1 - slab_cosh(x, 2.0)))) <= 25 * 0.02 ** 2


def test_bc_other_constant(slab2, linear):
    w, _ = solve_semilinear(slab2, linear, 0.0, bc=2.0, tol=1e-12)
    assert np.max(np.abs(w.values - 2 * slab_cosh(slab2.nodes[:, 0], 2.0))) <= 25 * 0.02 ** 2


# ---- transported problem

@pytest.mark.parametrize("kin", [make_linear_kinetic(1.0), make_lipschitz_ramp(2.0, 0.5)],
                         ids=["linear", "ramp"])
@pytest.mark.parametrize("theta", [dilation_field(2), shear_field(2), sine_field(2)],
                         ids=lambda t: t.name)
def test_transported_at_zero_is_bit_identical(disk1, kin, theta):
    U0, _ = solve_transported(disk1, theta, 0.0, kin, 0.2, tol=1e-12)
    u, _ = solve_semilinear_u(disk1, kin, 0.2, tol=1e-12)
    assert np.array_equal(U0.values, u.values)


def test_transported_slab_dilation_oracle(linear):
    tau = 0.1
    errs = []
    for h in (0.04, 0.02):
        m = build_slab_mesh(2.0, h)
        U, _ = solve_transported(m, dilation_field(1), tau, linear, 0.0, tol=1e-12)
        x = m.nodes[:, 0]
        exact = 1 - np.cosh((1 + tau) * x) / math.cosh(2 * (1 + tau))
        errs.append(np.max(np.abs(U.values - exact)))
    assert errs[1] <= 25 * 0.02 ** 2
    assert errs[0] / errs[1] >= 3.5


@pytest.mark.parametrize("kin", [make_linear_kinetic(1.0), make_lipschitz_ramp(2.0, 0.5)],
                         ids=["linear", "ramp"])
def test_transported_matches_moved_mesh(kin):
    theta = sine_field(1, 0.5, 1.0)
    tau = 0.1
    errs = []
    for h in (0.04, 0.02, 0.01):
        m = build_slab_mesh(2.0, h)
        U, _ = solve_transported(m, theta, tau, kin, 0.0, tol=1e-12)
        u_moved, _ = solve_semilinear_u(perturb_mesh(m, theta, tau), kin, 0.0, tol=1e-12)
        errs.append(np.max(np.abs(U.values - u_moved.values)))
    assert errs[2] <= 25 * 0.01 ** 2
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


def test_transported_singular(disk1, linear):
    with pytest.raises(SingularTransform):
        solve_transported(disk1, dilation_field(2), -1.5, linear, 0.0)


def test_transported_zero_field_any_tau(disk1, ramp):
    a, _ = solve_transported(disk1, zero_field(2), 0.3, ramp, 0.2, tol=1e-12)
    b, _ = solve_semilinear_u(disk1, ramp, 0.2, tol=1e-12)
    assert np.array_equal(a.values, b.values)


# ---- linear potential problem

def test_potential_zero_data(disk1):
    v = solve_linear_potential(disk1, np.ones(disk1.n_nodes), 0.0)
    assert np.all(v.values == 0.0)


def test_potential_cosh_oracle(slab2):
    c = -1.7
    v = solve_linear_potential(slab2, np.ones(slab2.n_nodes), c, tol=1e-12)
    assert np.max(np.abs(v.values - c * slab_cosh(slab2.nodes[:, 0], 2.0))) <= 25 * 0.02 ** 2


def test_potential_frozen_core_euler_oracle(slab5, slab5_root_state, root):
    w, _ = slab5_root_state
    exact = slab_exact_root(1.0, 0.5, 5.0)
    core = np.flatnonzero(w.values <= 1e-11)
    V = np.where(np.isin(np.arange(slab5.n_nodes), core), np.inf, root.derivative(w.values))
    c = 2.0
    v = solve_linear_potential(slab5, V, c, frozen=core, tol=1e-12)
    x = slab5.nodes[:, 0]
    s = euler_exponent(0.5)
    ref = c * (np.maximum(np.abs(x) - exact.rho, 0) / (5 - exact.rho)) ** s
    assert np.max(np.abs(v.values - ref)) <= 25 * 0.01 ** 2
    assert np.all(v.values[core] == 0.0)


def test_potential_unfrozen_infinity(disk1):
    V = np.ones(disk1.n_nodes)
    V[5] = np.inf
    with pytest.raises(UnfrozenInfinitePotential):
        solve_linear_potential(disk1, V, 1.0)


def test_potential_rejects_negative(disk1):
    with pytest.raises(ValueError):
        solve_linear_potential(disk1, -np.ones(disk1.n_nodes), 1.0)


# ---- norms

def test_norms_constant_on_disk():
    m = build_disk_mesh(1.0, 0.05)
    n = norms(ScalarField(m, np.full(m.n_nodes, 3.0)))
    assert n.L2 == pytest.approx(3.0 * math.sqrt(math.pi), rel=5e-3)
    assert n.L2 == pytest.approx(3.0 * math.sqrt(m.total_measure), rel=1e-12)
    assert n.H1_semi == pytest.approx(0.0, abs=1e-6)


def test_norms_x_on_slab():
    m = build_slab_mesh(1.0, 0.1)
    assert norms(ScalarField(m, m.nodes[:, 0])).H1_semi == pytest.approx(math.sqrt(2.0), rel=1e-12)


@pytest.mark.parametrize("mesh", [build_slab_mesh(1.0, 0.1), build_disk_mesh(1.0, 0.2)],
                         ids=["slab", "disk"])
def test_h2_surrogate_kills_linears(mesh):
    vals = 1.0 + 2.0 * mesh.nodes[:, 0]
    if mesh.dim == 2:
        vals = vals - 0.5 * mesh.nodes[:, 1]
    assert norms(ScalarField(mesh, vals)).H2_surrogate == pytest.approx(0.0, abs=1e-9)


def test_weighted_l2_mask(disk1):
    f = ScalarField(disk1, np.ones(disk1.n_nodes))
    mask = np.zeros(disk1.n_nodes, bool)
    assert weighted_l2(f, mask) == 0.0
    assert weighted_l2(f) == pytest.approx(math.sqrt(disk1.total_measure))


# ---- properties

small_disk = build_disk_mesh(1.0, 0.2)
small_slab = build_slab_mesh(1.0, 0.05)
kinetics = [make_root_kinetic(1.0, 0.5), make_lipschitz_ramp(2.0, 0.5), make_linear_kinetic(2.0)]


@given(st.sampled_from(kinetics), st.sampled_from([small_disk, small_slab]),
       st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 2 ** 31))
def test_comparison_principle(kin, mesh, a, b, seed):
    rng = np.random.default_rng(seed)
    f1 = rng.uniform(0.0, 1.0, mesh.n_nodes) * min(a, b) * kin.beta_one
    f2 = f1 + rng.uniform(0.0, 1.0, mesh.n_nodes) * abs(a - b) * kin.beta_one
    tol = 1e-11
    w1, _ = solve_semilinear(mesh, kin, f1, tol=tol)
    w2, _ = solve_semilinear(mesh, kin, f2, tol=tol)
    assert np.all(w1.values <= w2.values + 10 * tol)


@given(st.sampled_from(kinetics), st.sampled_from([small_disk, small_slab]), st.integers(0, 2 ** 31))
def test_bounds_preserved(kin, mesh, seed):
    f = np.random.default_rng(seed).uniform(0.0, 1.0, mesh.n_nodes) * kin.beta_one
    tol = 1e-11
    w, rep = solve_semilinear(mesh, kin, f, tol=tol)
    assert rep.bounds_ok
    assert np.all(w.values >= -10 * tol) and np.all(w.values <= 1 + 10 * tol)


def test_deterministic(slab2, root):
    a, _ = solve_semilinear(slab2, root, 0.1, tol=1e-12)
    b, _ = solve_semilinear(slab2, root, 0.1, tol=1e-12)
    assert np.array_equal(a.values, b.values)


def test_solution_kind(slab2, linear):
    w, _ = solve_semilinear(slab2, linear, 0.0)
    assert w.kind is FieldKind.SOLUTION and np.all(np.isfinite(w.values))


def test_stiffness_is_m_matrix_on_disk():
    assert is_m_matrix(build_disk_mesh(3.0, 0.2).laplacian)
