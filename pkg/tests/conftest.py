import numpy as np
import pytest

from copula_vi import bicop
from copula_vi.bicop import FamilyTag as F, PairCopula, Rotation as R
from copula_vi.dist import CopulaVariationalDist
from copula_vi.marginal import MarginalSet
from copula_vi.vine import Vine, VineEdge


def gaussian_pc(rho):
    return PairCopula(F.GAUSSIAN, R.R0, (rho,))


def pc_from_tau(family, tau, rotation=R.R0, nu=8.0):
    return PairCopula(family, rotation, bicop.theta_from_tau(family, tau, rotation, nu=nu))


def four_variable_vine(pcs=None, t2_first=(0, 1, (2,))):
    """Vine with T1 = {0-2, 1-2, 2-3}, T2 = {0,1|2 ; 0,3|2}, T3 = {1,3|0,2}."""
    pcs = pcs or [PairCopula()] * 6
    i, k, cond = t2_first
    return Vine(4, [
        [VineEdge(0, 2, (), pcs[0]), VineEdge(1, 2, (), pcs[1]), VineEdge(2, 3, (), pcs[2])],
        [VineEdge(i, k, cond, pcs[3]), VineEdge(0, 3, (2,), pcs[4])],
        [VineEdge(1, 3, (0, 2), pcs[5])],
    ])


def mixed_pcs():
    return [
        PairCopula(F.CLAYTON, R.R90, (1.5,)),
        PairCopula(F.GUMBEL, R.R0, (1.7,)),
        PairCopula(F.FRANK, R.R0, (3.0,)),
        PairCopula(F.STUDENT_T, R.R0, (0.4, 8.0)),
        PairCopula(F.JOE, R.R270, (1.6,)),
        gaussian_pc(-0.3),
    ]


@pytest.fixture
def mixed_vine():
    return four_variable_vine(mixed_pcs())


@pytest.fixture
def mixed_dist(mixed_vine):
    return CopulaVariationalDist(MarginalSet.gaussian(np.zeros(4)), mixed_vine)


def central_diff(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def rel_err(a, b, floor=1e-3):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), floor))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
