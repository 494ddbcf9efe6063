import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import betaln

from unmixkit import StepwiseConfig, dfs_select, f_pvalue, f_statistic
from unmixkit.data_io import generate_scene
from unmixkit.errors import InvalidDegreesOfFreedom
from unmixkit.stepwise import betainc

from conftest import make_library, separated_library


def f_tail_quad(f, d1, d2):
    """Upper-tail probability of the F distribution by numerical integration of its density."""
    logc = 0.5 * d1 * np.log(d1 / d2) - betaln(d1 / 2, d2 / 2)

    def pdf(x):
        if x <= 0:
            return 0.0
        return float(np.exp(logc + (d1 / 2 - 1) * np.log(x) - (d1 + d2) / 2 * np.log1p(d1 * x / d2)))

    # integrate the lower part on a finite interval: robust for heavy tails
    lower, _ = quad(pdf, 0.0, f, epsabs=1e-14, epsrel=1e-13, limit=500)
    return 1.0 - lower


def test_f_statistic_examples():
    assert f_statistic(10, 5, 1, 8) == 8.0
    assert f_statistic(3, 3, 1, 8) == 0.0
    assert f_statistic(1, 0, 1, 8) == np.inf
    with pytest.raises(InvalidDegreesOfFreedom):
        f_statistic(1, 0.5, 1, 0)


def test_f_pvalue_examples():
    assert f_pvalue(0.0, 3, 7) == 1.0
    assert f_pvalue(np.inf, 3, 7) == 0.0
    for n in (1, 2, 5, 17):
        assert f_pvalue(1.0, n, n) == pytest.approx(0.5, abs=1e-12)
    assert f_pvalue(8.0, 1, 8) == pytest.approx(f_tail_quad(8.0, 1, 8), abs=1e-10)
    assert f_pvalue(8.0, 1, 8) == pytest.approx(0.0222, abs=5e-5)


def test_f_pvalue_monotone_in_f():
    fs = np.linspace(0.05, 20, 200)
    for d1, d2 in [(1, 1), (1, 30), (4, 9), (30, 2)]:
        ps = [f_pvalue(f, d1, d2) for f in fs]
        assert np.all(np.diff(ps) < 0)


def test_betainc_edges():
    assert betainc(2.0, 3.0, 0.0) == 0.0
    assert betainc(2.0, 3.0, 1.0) == 1.0
    # I_x(1, 1) = x
    assert betainc(1.0, 1.0, 0.37) == pytest.approx(0.37, abs=1e-14)


def test_dfs_pure_pixel():
    rng = np.random.default_rng(0)
    S = rng.uniform(0.1, 1, (30, 6))
    sol = dfs_select(make_library(S), S[:, 4])
    assert sol.selected == [4]
    assert sol.coefficients[4] == pytest.approx(1.0)


def test_dfs_impossible_alpha_gives_empty_model():
    rng = np.random.default_rng(1)
    S = rng.uniform(0.1, 1, (30, 6))
    y = S @ [0.3, 0, 0.5, 0, 0, 0] + rng.normal(0, 0.05, 30)
    sol = dfs_select(make_library(S), y, StepwiseConfig(alpha=1e-300))
    assert sol.coefficients == {}


def test_dfs_two_component_recovery():
    lib = separated_library(10, 60, seed=2)
    S = lib.spectra
    clean = 0.6 * S[:, 3] + 0.4 * S[:, 7]
    rng = np.random.default_rng(2)
    sigma = np.sqrt(np.mean(clean**2) / 10 ** (40 / 10))
    y = clean + rng.normal(0, sigma, clean.size)
    sol = dfs_select(lib, y)
    assert {3, 7} <= set(sol.selected)


def test_dfs_invariants():
    lib = separated_library(15, 50, seed=3)
    for seed in range(10):
        scene = generate_scene(lib, 1, 3, snr_db=30, seed=seed)
        cfg = StepwiseConfig(alpha=0.05)
        sol = dfs_select(lib, scene.pixels[0], cfg)
        steps = sol.info["steps"]
        rss = [s["rss"] for s in steps]
        assert all(b < a for a, b in zip(rss, rss[1:]))
        assert all(s["p"] < cfg.alpha for s in steps)
        assert all(v >= 0 for v in sol.coefficients.values())
        again = dfs_select(lib, scene.pixels[0], cfg)
        assert again.selected == sol.selected


def test_dfs_tie_breaks_to_lowest_index():
    # two identical columns: same p-value, the lower index must win
    S = np.array([[1.0, 0.2, 0.2], [0.0, 1.0, 1.0], [0.5, 0.1, 0.1], [0.3, 0.6, 0.6]])
    y = S[:, 1] * 2.0
    sol = dfs_select(make_library(S), y)
    assert sol.selected[0] == 1
