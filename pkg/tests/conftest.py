import numpy as np
import pytest

from hdgal.assembly import Discretization
from hdgal.mesh import generate_unit_square


def lid_data(x, tag):
    out = np.zeros((len(x), 2))
    if tag == "lid":
        out[:, 0] = 1.0
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def disc_2_1():
    return Discretization(generate_unit_square(2), 1)


@pytest.fixture(scope="session")
def disc_2_2():
    return Discretization(generate_unit_square(2), 2)


# acceptance summary: one PASS/FAIL line per criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
