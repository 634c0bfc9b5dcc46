import numpy as np
import pytest
from hypothesis import settings

from fbcap import NoiseModel, build_scheme, solve_dual, synthesize

P = 10.0

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.split()[1].rstrip(":ab")), s)):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ma1():
    return NoiseModel.arma1(0.4)


@pytest.fixture(scope="session")
def ma2():
    return NoiseModel.from_coeffs([1.0, 0.1, 0.5])


@pytest.fixture(scope="session")
def arma3():
    return NoiseModel.from_coeffs([1.0, -0.3, 0.5, 0.2], [1.0, 0.1, 0.6, 0.5])


@pytest.fixture(scope="session")
def ma1_sol(ma1):
    return solve_dual(ma1, P, 20, 256)


@pytest.fixture(scope="session")
def ma2_sol(ma2):
    return solve_dual(ma2, P, 24, 256)


@pytest.fixture(scope="session")
def ma2_synth(ma2_sol):
    return synthesize(ma2_sol)


@pytest.fixture(scope="session")
def ma2_scheme(ma2_synth):
    return build_scheme(ma2_synth)


@pytest.fixture(scope="session")
def ma1_scheme(ma1_sol):
    return build_scheme(synthesize(ma1_sol))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
