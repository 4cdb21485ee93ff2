import numpy as np
import pytest

from probns.rng import BrownianDriver

_CRITERIA: list[str] = []


@pytest.fixture
def driver():
    return BrownianDriver(20240611)


@pytest.fixture
def criterion():
    """Record a one-line acceptance verdict; the lines are repeated in the terminal summary."""

    def report(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        print(line)
        _CRITERIA.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
