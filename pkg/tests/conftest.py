import numpy as np
import pytest

from extremal_flow.expressions import ExpressionVector
from extremal_flow.multimap import Box, SeedSet, VertexMultiMap
from extremal_flow.scenario import benchmark


def make_F(vertices, dim, bound, lipschitz, horizon=1.0, half_width=3.0, seed_half=1.0):
    maps = [ExpressionVector(v, dim) for v in vertices]
    dom = Box(np.full(dim, -half_width), np.full(dim, half_width))
    D = SeedSet(Box(np.full(dim, -seed_half), np.full(dim, seed_half)))
    return VertexMultiMap(maps, dim, horizon, dom, D, bound, lipschitz=lipschitz)


@pytest.fixture(scope="session")
def segment():
    return benchmark("constant_segment")


@pytest.fixture(scope="session")
def square():
    return benchmark("planar_square")


@pytest.fixture(scope="session")
def rotating():
    return benchmark("rotating_segment")


@pytest.fixture(scope="session")
def scalar_control():
    return benchmark("bangbang_scalar")


# acceptance lines, printed once more at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
