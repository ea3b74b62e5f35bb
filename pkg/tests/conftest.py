from pathlib import Path

import numpy as np
import pytest

from bernstein_aft.data import Dataset

DATA_DIR = Path(__file__).parent / "data"

# PASS/FAIL lines recorded by test_acceptance.py
ACCEPTANCE: list[str] = []


def random_instance(rng, n=8, m=5, d=2, kinds=("exact", "left", "interval", "right")):
    """Random rescaled dataset with every basis argument inside (0, 1).

    Returns ``(gamma, p, dataset)``; ``p`` is an interior simplex point.
    """
    gamma = rng.normal(scale=0.5, size=d)
    x = rng.uniform(-1, 1, size=(n, d))
    accel = np.exp(x @ gamma)
    y1 = np.empty(n)
    y2 = np.empty(n)
    delta = np.ones(n, dtype=int)
    for i in range(n):
        kind = kinds[i % len(kinds)]
        a, b = np.sort(rng.uniform(0.05, 0.95, 2))
        if kind == "exact":
            y1[i] = y2[i] = a * accel[i]
            delta[i] = 0
        elif kind == "left":
            y1[i], y2[i] = 0.0, b * accel[i]
        elif kind == "interval":
            y1[i], y2[i] = a * accel[i], b * accel[i]
        else:
            y1[i], y2[i] = a * accel[i], np.inf
    p = rng.dirichlet(np.ones(m + 1))
    return gamma, p, Dataset(y1, y2, delta, x, tau=1.0, rescaled=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


@pytest.fixture
def bcdeter_path():
    return DATA_DIR / "bcdeter.csv"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("] ")[1].split(".")[0])):
            terminalreporter.write_line(line)
