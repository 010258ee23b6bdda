import numpy as np
import pytest

from vnngp import _accel

ACCEPTANCE = []


def record(number, name, passed, detail=""):
    """Store one acceptance line; printed again in the terminal summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {name}" + (f" ({detail})" if detail else "")
    ACCEPTANCE.append((number, line))
    print(line)
    return passed


@pytest.fixture
def report():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=[True, False], ids=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param and not _accel.HAVE_NUMBA:
        pytest.skip("numba not installed")
    monkeypatch.setattr(_accel, "USE_NUMBA", request.param)
    return request.param
