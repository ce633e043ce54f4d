import numpy as np
import pytest

from gpdm_bayes.geometry import construct_ghost_points, generate_flat_interval, generate_semi_ellipse, generate_semi_torus
from gpdm_bayes.graph_ops import calibrate_epsilon


@pytest.fixture(scope="session")
def ellipse630():
    cloud = generate_semi_ellipse(630)
    return cloud, construct_ghost_points(cloud, 10)


@pytest.fixture(scope="session")
def ellipse315():
    cloud = generate_semi_ellipse(315)
    ghosts = construct_ghost_points(cloud, 10)
    eps, _ = calibrate_epsilon(cloud.points, 51)
    return cloud, ghosts, eps


@pytest.fixture(scope="session")
def torus36():
    return generate_semi_torus(36, 36)


@pytest.fixture(scope="session")
def flat():
    """Flat unit interval with the bandwidth used throughout the solver tests."""

    def make(n, K=8):
        cloud = generate_flat_interval(n)
        eps, _ = calibrate_epsilon(cloud.points, 51)
        return cloud, construct_ghost_points(cloud, K), eps

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
