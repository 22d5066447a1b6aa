import numpy as np
import pytest

from evocontrol import models
from evocontrol.evolution import EvolutionGains, feasible_initialize
from evocontrol.grid import Grid, GridField


def smooth_basis(grid: Grid) -> np.ndarray:
    """Low-order smooth functions on the grid, one per column."""
    s = (grid.t - grid.t0) / (grid.tf - grid.t0)
    return np.stack([np.ones_like(s), s, np.sin(np.pi * s), np.cos(2 * np.pi * s)], axis=1)


def random_smooth_field(rng, grid: Grid, n: int, m: int, scale=1.0) -> GridField:
    B = smooth_basis(grid)
    x = B @ (scale * rng.normal(size=(B.shape[1], n)))
    u = B @ (scale * rng.normal(size=(B.shape[1], m)))
    return GridField(grid, x, u)


def random_feasible_field(rng, problem, grid: Grid, scale=1.0) -> GridField:
    B = smooth_basis(grid)
    u = B @ (scale * rng.normal(size=(B.shape[1], problem.m)))
    return feasible_initialize(problem, u, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def ex1():
    return models.example1()


@pytest.fixture(scope="session")
def ex2():
    return models.example2()


@pytest.fixture(scope="session")
def grid61():
    return Grid(61, 0.0, 3.0)


@pytest.fixture(scope="session")
def gains1():
    return EvolutionGains.build(2, 1, 2e-2, 0.1, 0.1)


@pytest.fixture(scope="session")
def gains2():
    return EvolutionGains.build(3, 1, 2e-6, 0.1, 0.1, 2e-4)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
