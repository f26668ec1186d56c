import numpy as np
import pytest

from dualmpc import polytope as pt
from dualmpc.governor import build_governor
from dualmpc.linalg import solve_dare
from dualmpc.system import example1, example2

# lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


class Synth:
    """Offline objects of one example, built through the library API."""

    def __init__(self, system):
        self.system = system
        self.Q = np.eye(system.nx)
        self.R = np.eye(system.nu)
        self.ric = solve_dare(system.A, system.B, self.Q, self.R)
        self.K = self.ric.K
        self.sigma = pt.max_admissible_set(system.A, system.B, self.K, system.X, system.U)
        self.gov = build_governor(system.A, system.B, self.K, system.X, system.U, sigma_inf=self.sigma)
        self.region = self.gov.feasible_region()


@pytest.fixture(scope="session")
def ex1():
    return Synth(example1())


@pytest.fixture(scope="session")
def ex2():
    return Synth(example2())


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
