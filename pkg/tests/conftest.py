import numpy as np
import pytest

from twinsearch import TimeSeries, generate

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def record_criterion(request):
    """Log one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number, title, passed, detail=""):
        line = f"[criterion {number}] {'PASS' if passed else 'FAIL'} {title}"
        if detail:
            line += f" -- {detail}"
        request.config.stash[_CRITERIA].append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_walk():
    return generate("walk", 2_000, seed=7)


@pytest.fixture(scope="session")
def medium_walk():
    return generate("walk", 20_000, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def naive_twins(values, q, eps):
    """Double loop over every window; no numpy vectorization."""
    values = [float(v) for v in values]
    q = [float(v) for v in q]
    l = len(q)
    out = []
    for p in range(len(values) - l + 1):
        worst = 0.0
        for i in range(l):
            d = abs(values[p + i] - q[i])
            if d > worst:
                worst = d
        if worst <= eps:
            out.append(p)
    return out


@pytest.fixture
def naive():
    return naive_twins


@pytest.fixture(scope="session")
def tiny_series():
    return TimeSeries([1.0, 2.0, 3.0, 4.0])
