import os

import numpy as np
import pytest

DATA = os.path.join(os.path.dirname(__file__), "data")


def random_spd(rng, p, floor=0.1):
    A = rng.standard_normal((p, p))
    return A @ A.T / p + floor * np.eye(p)


def factor_panel(rng, p, T, K=2, noise=1.0):
    """Demeaned panel with K strong factors plus white noise."""
    from poetcov.panel import demean

    Y = rng.standard_normal((p, K)) @ rng.standard_normal((K, T)) + noise * rng.standard_normal((p, T))
    return demean(Y)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def data_dir():
    return DATA


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail, secs = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  ({secs:.1f}s)  {detail}")
