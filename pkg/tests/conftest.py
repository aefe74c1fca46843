import numpy as np
import pytest

# criterion id -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = {}


def record(criterion, passed, detail=""):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (len(k), k)):
        passed, detail = ACCEPTANCE[key]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {key}: {detail}")


def ball(shape, center, radius):
    grid = np.indices(shape, dtype=np.float64)
    d2 = sum((g - c) ** 2 for g, c in zip(grid, center))
    return d2 <= radius * radius


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
