import numpy as np
import pytest

from coupledmc.models import BlackScholes, Heston


@pytest.fixture
def bs1():
    return BlackScholes([0.06], [0.3], [1.0], T=1.0, N=50)


@pytest.fixture
def bs2():
    return BlackScholes([0.06] * 2, [0.3] * 2, [1.0] * 2, T=1.0, N=50)


@pytest.fixture
def heston1():
    return Heston([0.5], [0.04], [0.5], [-0.7], [1.0], [0.1], T=1.0, N=50)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; returns the verdict so tests can assert on it."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
