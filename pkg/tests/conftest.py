import numpy as np
import pytest

from pfpcmc.measgen import make_scenario
from pfpcmc.netmodel import load_case

TWO_BUS = """
mpc.baseMVA = 1;
mpc.bus = [
    1 3 0 0 0 0 1 1 0;
    2 1 {p} {q} 0 0 1 1 0;
];
mpc.branch = [
    1 2 0 0.1 0 0 0 0 0 0 1;
];
"""


@pytest.fixture(scope="session")
def case4():
    return load_case("case4")


@pytest.fixture(scope="session")
def case141():
    return load_case("case141")


@pytest.fixture(scope="session")
def scn4(case4):
    return make_scenario(case4, fad=0.4, seed=0)


@pytest.fixture(scope="session")
def scn141(case141):
    return make_scenario(case141, fad=0.32, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
