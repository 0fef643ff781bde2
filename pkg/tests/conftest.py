import numpy as np
import pytest

from invstab.measures import make_gaussian, make_gibbs_1d
from invstab.moment_map import solve_moment_map_1d
from invstab.stein import kernel_closed_form_1d, kernel_from_moment_map

EPS = 0.3

# filled by the acceptance suite, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def logcosh_measure(eps=EPS, a=0.5):
    """``V = a x^2 + eps log cosh x`` with its exact derivatives."""
    return make_gibbs_1d(
        lambda x: a * x ** 2 + eps * np.log(np.cosh(x)),
        lambda x: 2 * a * x + eps * np.tanh(x),
        lambda x: 2 * a + eps / np.cosh(x) ** 2,
        name="logcosh",
    )


@pytest.fixture(scope="session")
def gauss1():
    return make_gaussian(0.0, 1.0)


@pytest.fixture(scope="session")
def logcosh():
    return logcosh_measure()


@pytest.fixture(scope="session")
def logcosh_map(logcosh):
    return solve_moment_map_1d(logcosh)


@pytest.fixture(scope="session")
def logcosh_kernel(logcosh_map):
    return kernel_from_moment_map(logcosh_map)


@pytest.fixture(scope="session")
def logcosh_closed_kernel(logcosh):
    return kernel_closed_form_1d(logcosh)
