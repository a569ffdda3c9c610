import numpy as np
import pytest

from emflow.geometry import Minkowski, UniformField

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, title, ok, detail)``."""
    log = request.config.stash[_CRITERIA]

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}"
        if detail:
            line += f" | {detail}"
        log.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(_CRITERIA, [])
    if not log:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, line in sorted(log):
        terminalreporter.write_line(line)


@pytest.fixture
def flat():
    return Minkowski(4)


@pytest.fixture
def efield():
    return UniformField(4, E=1.0)


@pytest.fixture
def rest():
    return np.zeros(4), np.array([1.0, 0.0, 0.0, 0.0])
