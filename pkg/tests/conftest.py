import sys

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gaussian_data(n, p, seed=0, noise=1.0):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, p))
    beta = r.standard_normal(p) / np.sqrt(p)
    return X, X @ beta + noise * r.standard_normal(n), beta


@pytest.fixture
def small_data():
    return gaussian_data(40, 30, seed=7)


@pytest.fixture
def wide_data():
    return gaussian_data(30, 45, seed=8)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
    for c in sorted(mod.RESULTS):
        for part, ok, detail in mod.RESULTS[c]:
            terminalreporter.write_line(f"  {c}/{part}: {'PASS' if ok else 'FAIL'} {detail}")
