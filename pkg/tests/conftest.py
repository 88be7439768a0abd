import numpy as np
import pytest

from cogradio._rng import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


def binomial_sigma(p: float, n: int) -> float:
    return float(np.sqrt(p * (1.0 - p) / n))


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance lines, one per criterion, after the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
