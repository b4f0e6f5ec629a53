import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from deadcore.elliptic import solve_semilinear
from deadcore.geometry import build_disk_mesh, build_slab_mesh
from deadcore.kinetics import make_linear_kinetic, make_lipschitz_ramp, make_root_kinetic

settings.register_profile("deadcore", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("deadcore")

RHO = 5.0 - 2.0 * math.sqrt(3.0)


@pytest.fixture(scope="session")
def root():
    return make_root_kinetic(1.0, 0.5)


@pytest.fixture(scope="session")
def ramp():
    return make_lipschitz_ramp(2.0, 0.5)


@pytest.fixture(scope="session")
def linear():
    return make_linear_kinetic(1.0)


@pytest.fixture(scope="session")
def slab2():
    return build_slab_mesh(2.0, 0.02)


@pytest.fixture(scope="session")
def slab5():
    return build_slab_mesh(5.0, 0.01)


@pytest.fixture(scope="session")
def disk1():
    return build_disk_mesh(1.0, 0.1)


@pytest.fixture(scope="session")
def slab5_root_state(slab5, root):
    w, report = solve_semilinear(slab5, root, 0.0, tol=1e-12)
    return w, report


def slab_cosh(x, L):
    return np.cosh(x) / math.cosh(L)


# acceptance verdict lines, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
