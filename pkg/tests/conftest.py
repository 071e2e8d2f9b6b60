import numpy as np
import pytest

from adaptapg import data


@pytest.fixture(scope="session")
def spectral50():
    """n=50, mu=1, L=100 quadratic with a random start (the reference instance)."""
    problem = data.gen_spectral_instance(50, 1.0, 100.0, seed=0)
    x0 = problem.x_star + data.rng(1).standard_normal(50)
    return problem, x0


@pytest.fixture
def gen():
    return np.random.Generator(np.random.PCG64(12345))


_CRITERIA = {}


@pytest.fixture
def record_criterion():
    """Store one pass/fail line per acceptance criterion for the terminal summary."""
    def record(number, passed, detail):
        _CRITERIA[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(_CRITERIA[number])
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
