import numpy as np
import pytest

from pilot.kinematics import HardwareSpec


def fd_grad(f, x, h, idx):
    """Central differences of scalar f at flat indices of x."""
    out = []
    for i in idx:
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        out.append((f(xp) - f(xm)) / (2 * h))
    return np.array(out)


@pytest.fixture
def spec():
    return HardwareSpec()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria register (criterion id -> (passed, detail)); printed after the run
CRITERIA: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: (int(k.split()[0]), k)):
        ok, detail = CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
