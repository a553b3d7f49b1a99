import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from diluteising.gibbs import GibbsSpec
from diluteising.lattice import BoundaryCondition, LatticeRegion, gen_environment, uniform_environment

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


def make_spec(shape=(2, 2), beta=1.0, h=0.0, bc="free", p=1.0, seed=0, origin=None):
    region = LatticeRegion.box(shape, origin=origin)
    env = uniform_environment(region) if p >= 1 else gen_environment(region, p, seed)
    return GibbsSpec(env, beta, h, BoundaryCondition.uniform(region, bc))


@pytest.fixture
def spec_factory():
    return make_spec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
