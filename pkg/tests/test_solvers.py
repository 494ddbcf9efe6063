import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import nnls as scipy_nnls

from unmixkit import LassoConfig, bounded_lstsq, lasso_cv, lasso_solve, nnls_solve, ols_solve
from unmixkit.data_io import generate_scene
from unmixkit.errors import SingularNormalMatrix, TooFewBands, Underdetermined
from unmixkit.solvers import lasso_cv_curve, lasso_fit, lasso_objective, pick_lambda

from conftest import box_lsq_oracle, make_library, random_instance, separated_library


# OLS

def test_ols_identity():
    sol = ols_solve(make_library(np.eye(2)), [0.3, 0.7])
    assert sol.dense(2) == pytest.approx([0.3, 0.7])
    assert not sol.constrained


def test_ols_signed_solution_matches_inverse():
    S = np.array([[1.0, 1.0], [1.0, 0.0]])
    sol = ols_solve(make_library(S), [0.0, 1.0])
    assert sol.dense(2) == pytest.approx(np.linalg.inv(S) @ [0.0, 1.0])
    assert sol.dense(2) == pytest.approx([1.0, -1.0])


def test_ols_errors():
    with pytest.raises(SingularNormalMatrix):
        ols_solve(make_library([[1.0, 1.0], [2.0, 2.0], [0.5, 0.5]]), [1.0, 2.0, 3.0])
    with pytest.raises(Underdetermined):
        ols_solve(make_library(np.ones((2, 3))), [1.0, 2.0])


# NNLS

def test_nnls_pure_pixel():
    rng = np.random.default_rng(0)
    S = rng.uniform(0, 1, (10, 4))
    sol = nnls_solve(make_library(S), S[:, 0])
    assert sol.coefficients == {0: pytest.approx(1.0)}
    assert sol.rmse == pytest.approx(0.0, abs=1e-14)


def test_nnls_constrained_case():
    S = np.array([[1.0, 1.0], [1.0, 0.0]])
    sol = nnls_solve(make_library(S), [0.0, 1.0])
    assert set(sol.coefficients) == {0}
    assert sol.coefficients[0] == pytest.approx(0.5)
    assert float(sol.residual @ sol.residual) == pytest.approx(0.5)


def test_nnls_zero_target():
    sol = nnls_solve(make_library(np.eye(3)), np.zeros(3))
    assert sol.coefficients == {}
    assert sol.rmse == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_nnls_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    S, y = random_instance(rng, n_max=15, m_max=30)
    ours = nnls_solve(make_library(S), y).dense(S.shape[1])
    ref, _ = scipy_nnls(S, y)
    r_ours = np.linalg.norm(y - S @ ours)
    r_ref = np.linalg.norm(y - S @ ref)
    assert r_ours <= r_ref + 1e-10 * max(1.0, r_ref)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bounded_lstsq_matches_bvls(seed):
    rng = np.random.default_rng(seed)
    S, y = random_instance(rng, n_max=10, m_max=20)
    ub = rng.uniform(0.05, 1.0, S.shape[1])
    x, _ = bounded_lstsq(S, y, ub)
    assert np.all(x >= 0) and np.all(x <= ub)
    ref = box_lsq_oracle(S, y, ub)
    f = lambda v: float(np.sum((y - S @ v) ** 2))
    assert f(x) <= f(ref) + 1e-10 * max(1.0, f(ref))


# LASSO

def test_lasso_identity_soft_threshold():
    sol = lasso_solve(make_library(np.eye(2)), [0.3, 0.7], 0.1)
    assert sol.dense(2) == pytest.approx([0.2, 0.6], abs=1e-10)


def test_lasso_identity_grid_oracle():
    y = np.array([0.3, 0.7])
    lam = 0.1
    g = np.linspace(0, 1, 1001)
    A, B = np.meshgrid(g, g, indexing="ij")
    obj = ((y[0] - A) ** 2 + (y[1] - B) ** 2) / 2 + lam * (A + B)
    i, j = np.unravel_index(np.argmin(obj), obj.shape)
    sol = lasso_solve(make_library(np.eye(2)), y, lam)
    assert sol.dense(2) == pytest.approx([g[i], g[j]], abs=1e-3)


def test_lasso_zero_penalty_equals_nnls():
    rng = np.random.default_rng(3)
    S = rng.uniform(0, 1, (30, 8))
    y = rng.uniform(0, 1, 30)
    lib = make_library(S)
    assert lasso_solve(lib, y, 0.0).dense(8) == pytest.approx(nnls_solve(lib, y).dense(8), abs=1e-6)


def test_lasso_large_penalty_empty():
    rng = np.random.default_rng(4)
    S = rng.uniform(0, 1, (20, 5))
    y = rng.uniform(0, 1, 20)
    lam_max = float(np.max(2.0 / 20 * np.abs(S.T @ y)))
    sol = lasso_solve(make_library(S), y, lam_max)
    assert sol.coefficients == {}
    # subgradient oracle: at a = 0 every coordinate satisfies (2/M) S_j^T y <= lam
    assert np.all(2.0 / 20 * (S.T @ y) <= lam_max + 1e-15)
    assert lasso_solve(make_library(S), y, lam_max * 0.9).coefficients != {}


def test_lasso_kkt_random():
    rng = np.random.default_rng(5)
    for _ in range(20):
        S, y = random_instance(rng, n_max=20, m_max=40, m_min=2)
        M = S.shape[0]
        lam = float(rng.uniform(0.001, 0.05))
        a, _ = lasso_fit(S, y, lam)
        grad = -2.0 / M * S.T @ (y - S @ a) + lam
        assert np.all(a >= 0)
        assert np.all(grad >= -1e-7)
        assert np.all(np.abs(grad[a > 0]) <= 1e-7)


def test_lasso_objective_history_monotone():
    rng = np.random.default_rng(6)
    S, y = random_instance(rng, n_max=30, m_max=60, m_min=5)
    _, info = lasso_fit(S, y, 0.005, record_history=True)
    h = np.array(info["objective_history"])
    assert len(h) >= 1
    assert np.all(np.diff(h) <= 1e-12 * np.maximum(1.0, np.abs(h[:-1])))
    assert h[-1] == pytest.approx(lasso_objective(S, y, lasso_fit(S, y, 0.005)[0], 0.005), rel=1e-6)


def test_lasso_cv_noiseless_superset():
    lib = separated_library(20, 80, seed=1)
    for seed in range(5):
        scene = generate_scene(lib, 1, 2, seed=seed)
        _, sol = lasso_cv(lib, scene.pixels[0])
        assert set(scene.ground_truth[0]) <= set(sol.coefficients)


def test_cv_single_value_grid_equals_solve():
    rng = np.random.default_rng(7)
    S = rng.uniform(0, 1, (40, 6))
    y = S @ np.array([0.5, 0, 0, 0.2, 0, 0]) + rng.normal(0, 0.01, 40)
    lib = make_library(S)
    cfg = LassoConfig(grid_start=0.02, grid_stop=0.02)
    lam, sol = lasso_cv(lib, y, cfg)
    assert lam == 0.02
    assert sol.dense(6) == pytest.approx(lasso_solve(lib, y, 0.02).dense(6), abs=1e-12)


def test_pick_lambda_tie_prefers_larger():
    assert pick_lambda(np.array([0.001, 0.002, 0.003]), np.array([1.0, 0.5, 0.5])) == 0.003
    assert pick_lambda(np.array([0.001, 0.002]), np.array([0.4, 0.5])) == 0.001


def test_cv_deterministic_and_too_few_bands():
    rng = np.random.default_rng(8)
    S = rng.uniform(0, 1, (30, 5))
    y = rng.uniform(0, 1, 30)
    cfg = LassoConfig()
    e1 = lasso_cv_curve(S, y, cfg)
    e2 = lasso_cv_curve(S, y, cfg)
    assert np.array_equal(e1, e2)
    assert len(cfg.grid()) == 100 and cfg.grid()[0] == 0.001 and cfg.grid()[-1] == 0.1
    with pytest.raises(TooFewBands):
        lasso_cv_curve(S[:4], y[:4], cfg)
