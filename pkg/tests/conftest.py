import itertools

import numpy as np
import pytest
from scipy.optimize import lsq_linear

from unmixkit import SpectralLibrary


def make_library(S, wavelengths=None, categories=None):
    S = np.asarray(S, dtype=float)
    M, N = S.shape
    wl = np.arange(1, M + 1, dtype=float) if wavelengths is None else wavelengths
    cats = categories or ["mineral"] * N
    return SpectralLibrary(wl, S, [f"s{i}" for i in range(N)], cats)


def random_instance(rng, n_max=50, m_max=100, n_min=1, m_min=1):
    N = int(rng.integers(n_min, n_max + 1))
    M = int(rng.integers(m_min, m_max + 1))
    S = rng.uniform(0, 1, (M, N))
    y = rng.uniform(0, 1, M)
    return S, y


def box_lsq_oracle(A, b, upper=None):
    """scipy bounded least squares, polished to round-off."""
    n = A.shape[1]
    if n == 0:
        return np.zeros(0)
    ub = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    return lsq_linear(A, b, bounds=(np.zeros(n), ub), method="bvls", tol=1e-14).x


def enumerate_minlp(S, y, p, caps):
    """Best RMSE over every support of size <= p, each fit by box-constrained least squares."""
    M, N = S.shape
    best = float(np.sqrt(y @ y / M))
    for k in range(1, min(p, N) + 1):
        for idx in itertools.combinations(range(N), k):
            idx = list(idx)
            a = box_lsq_oracle(S[:, idx], y, caps[idx])
            r = y - S[:, idx] @ a
            best = min(best, float(np.sqrt(r @ r / M)))
    return best


def grid_oracle_2d(f, lo=0.0, hi=1.0, n=1001):
    """Minimiser of f over a square grid, refined once around the best point."""
    g = np.linspace(lo, hi, n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    V = np.vectorize(lambda a, b: f(np.array([a, b])))(X, Y)
    i, j = np.unravel_index(np.argmin(V), V.shape)
    return np.array([g[i], g[j]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def separated_library(n, m, seed=0, width=0.04):
    """Narrow Gaussian features at evenly spaced centres: nearly orthogonal spectra."""
    rng = np.random.default_rng(seed)
    wl = np.linspace(0.4, 2.5, m)
    centres = np.linspace(wl[0], wl[-1], n + 2)[1:-1]
    S = np.exp(-0.5 * ((wl[:, None] - centres[None, :]) / width) ** 2)
    S *= rng.uniform(0.5, 1.0, n)
    return SpectralLibrary(wl, S, [f"s{i}" for i in range(n)], ["mineral"] * n)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
