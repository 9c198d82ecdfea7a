import numpy as np
import pytest

from vosub import CoefficientSet, Excitation, build_disk_mesh

# acceptance results collected by test_acceptance.py, printed at the end of the run
ACCEPTANCE_RESULTS = {}


@pytest.fixture(scope="session")
def disk2():
    return build_disk_mesh(2)


@pytest.fixture(scope="session")
def disk3():
    return build_disk_mesh(3)


@pytest.fixture(scope="session")
def const_case(disk3):
    cfg = CoefficientSet.uniform(disk3, 0.5)
    return disk3, cfg, Excitation.constant(disk3, {2: 1.0})


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n].line())
