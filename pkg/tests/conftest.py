import numpy as np
import pytest

from spmet_gsa.defaults import CE_INIT, T_INIT, THETA_P_INIT, kokam_parameters
from spmet_gsa.model import CellState


@pytest.fixture(scope="session")
def params():
    return kokam_parameters()


@pytest.fixture(scope="session")
def x0(params):
    return CellState.equilibrium(THETA_P_INIT, CE_INIT, T_INIT, params.P)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance lines are collected here and repeated in the terminal summary
_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """``record(n, ok, detail)`` stores and prints one line for criterion ``n``."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(n, ok, detail):
        line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
        lines[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
