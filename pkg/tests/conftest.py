import itertools

import numpy as np
import pytest

from centering.rbm import RbmParams


def random_rbm(rng, n, m, centered=True, scale=1.0):
    W = rng.normal(0.0, scale, size=(n, m))
    b = rng.normal(0.0, scale, size=n)
    c = rng.normal(0.0, scale, size=m)
    mu = rng.random(n) if centered else np.zeros(n)
    lam = rng.random(m) if centered else np.zeros(m)
    return RbmParams(W, b, c, mu, lam)


def brute_force_log_z(p):
    """ln Z summed over every joint state, written without the library helpers."""
    n, m = p.W.shape
    vals = []
    for x in itertools.product((0.0, 1.0), repeat=n):
        xc = np.array(x) - p.mu
        for h in itertools.product((0.0, 1.0), repeat=m):
            hc = np.array(h) - p.lam
            vals.append(xc @ p.b + hc @ p.c + xc @ p.W @ hc)
    vals = np.array(vals)
    top = vals.max()
    return float(top + np.log(np.exp(vals - top).sum()))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
