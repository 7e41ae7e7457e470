import numpy as np
import pytest

from pflsim.curves import FunctionalSample, Grid, center


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_sample(rng, n=40, G=51, n_terms=8) -> FunctionalSample:
    grid = Grid.uniform(G)
    t = grid.points
    basis = np.vstack([np.cos(k * np.pi * t) for k in range(n_terms)])
    coef = rng.standard_normal((n, n_terms)) / (1 + np.arange(n_terms))
    return FunctionalSample(grid, coef @ basis)


@pytest.fixture
def centered_sample(rng):
    return center(random_sample(rng))


def pytest_terminal_summary(terminalreporter):
    from .acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
