import itertools
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kocp.polynomial import Polynomial  # noqa: E402
from oracles import monomials  # noqa: E402


def random_sym(rng, d, scale=1.0):
    G = rng.standard_normal((d, d)) * scale
    return 0.5 * (G + G.T)


def random_pd(rng, d, floor=0.5):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (Q * rng.uniform(floor, 2.0, d)) @ Q.T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_standard(rng, d, extra=1):
    """``min tr(C X)`` with ``tr X = 1`` and ``extra`` random constraints feasible at a diagonal point."""
    C = random_sym(rng, d)
    X0 = np.diag(rng.uniform(0.5, 1.5, d))
    X0 /= np.trace(X0)
    A = [np.eye(d)] + [random_sym(rng, d) for _ in range(extra)]
    b = [float(np.sum(a * X0)) for a in A]
    return C, A, b


def square_sum(rng, nvars, half_degree, count):
    """Sum of squares of random polynomials, expanded with plain dictionaries."""
    basis = monomials(nvars, half_degree)
    terms = defaultdict(float)
    for _ in range(count):
        coef = rng.standard_normal(len(basis))
        for (a, ca), (b, cb) in itertools.product(zip(basis, coef), repeat=2):
            terms[tuple(x + y for x, y in zip(a, b))] += ca * cb
    return Polynomial(nvars, dict(terms))


def sample_nonnegative(p, rng):
    pts = rng.standard_normal((1000, p.nvars)) * 2
    vals = p.evaluate(pts)
    return float(vals.min()) >= -1e-9 * max(1.0, p.max_abs_coef())


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
