import json
from pathlib import Path

import pytest

from teamsort.dist import TypeDistribution, illustrative_piecewise
from teamsort.equilibrium import solve_equilibrium
from teamsort.matchset import sample_assignment

ORACLES = json.loads((Path(__file__).parent / "oracles" / "independent.json").read_text())


@pytest.fixture(scope="session")
def oracles():
    return ORACLES


@pytest.fixture(scope="session")
def uniform():
    return TypeDistribution.uniform(0.0, 1.0)


@pytest.fixture(scope="session")
def beta21():
    return TypeDistribution.beta(2.0, 1.0)


@pytest.fixture(scope="session")
def eq_uniform(uniform):
    return solve_equilibrium(uniform, n_w=2, check="off")


@pytest.fixture(scope="session")
def eq_beta(beta21):
    return solve_equilibrium(beta21, n_w=2, check="off")


@pytest.fixture(scope="session")
def eq_uniform3(uniform):
    return solve_equilibrium(uniform, n_w=3, check="off")


@pytest.fixture(scope="session")
def eq_illustrative():
    return solve_equilibrium(illustrative_piecewise(), n_w=2, check="off")


@pytest.fixture(scope="session")
def sample_uniform(eq_uniform):
    return sample_assignment(eq_uniform, m_points=3000, seed=1)


@pytest.fixture(scope="session")
def sample_illustrative(eq_illustrative):
    return sample_assignment(eq_illustrative, m_points=3000, seed=0)
