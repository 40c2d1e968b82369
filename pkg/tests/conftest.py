import numpy as np
import pytest

from stacksim.config import default_scenario

_ACCEPTANCE_LINES: list = []


@pytest.fixture
def scenario():
    return default_scenario()


@pytest.fixture
def small_scenario():
    """Cheap geometry for unit tests: 3x3 layers, two streams."""
    return default_scenario().replace(atoms_tx=9, atoms_rx=9, layers_tx=2, layers_rx=2,
                                      num_streams=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""
    def record(number: int, passed: bool, detail: str):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
