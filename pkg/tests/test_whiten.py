import numpy as np
import pytest

from unmixkit import LassoConfig, WhitenStats, ace_score, compute_stats, hysudeb_unmix, lasso_cv, select_roi
from unmixkit.data_io import Cube, generate_scene
from unmixkit.errors import DimensionMismatch, EmptyCube, InvalidThreshold
from unmixkit.whiten import EIG_FLOOR, whiten_matrix, whiten_spectrum

from conftest import make_library, separated_library


def test_identical_pixels():
    X = np.tile([0.2, 0.5, 0.1], (10, 1))
    st = compute_stats(X)
    assert np.array_equal(st.covariance, np.zeros((3, 3)))
    WtW = st.transform.T @ st.transform
    assert WtW == pytest.approx(np.eye(3) / EIG_FLOOR)
    assert np.allclose(whiten_matrix(st, X), 0.0)


def test_diagonal_covariance():
    st = WhitenStats.from_covariance(np.zeros(2), np.diag([4.0, 1.0]))
    assert np.abs(st.transform) == pytest.approx(np.diag([0.5, 1.0]))
    assert st.transform @ st.covariance @ st.transform.T == pytest.approx(np.eye(2))
    out = whiten_spectrum(st, [2.0, 3.0])
    assert np.abs(out) == pytest.approx(np.abs(np.diag([0.5, 1.0]) @ [2.0, 3.0]))


def test_random_cube_whitens():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(6, 6))
    X = rng.normal(size=(400, 6)) @ A + 3.0
    st = compute_stats(X)
    W = st.transform
    assert W @ st.covariance @ W.T == pytest.approx(np.eye(6), abs=1e-9)
    assert st.eigenvectors.T @ st.eigenvectors == pytest.approx(np.eye(6), abs=1e-12)
    assert np.all(np.diff(st.eigenvalues) <= 0)
    assert whiten_spectrum(st, st.mean) == pytest.approx(np.zeros(6), abs=1e-12)


def test_identity_stats_leave_spectrum_unchanged():
    st = WhitenStats.identity(4)
    assert np.array_equal(whiten_spectrum(st, [1.0, 2.0, 3.0, 4.0]), [1.0, 2.0, 3.0, 4.0])


def test_rank_deficient_covariance():
    X = np.array([[0.1, 0.2, 0.3], [0.1, 0.2, 0.3], [0.4, 0.1, 0.0]])
    st = compute_stats(X)
    assert np.all(np.isfinite(st.transform))


def test_hysudeb_identity_equals_lasso_cv():
    lib = separated_library(12, 60, seed=1)
    scene = generate_scene(lib, 3, 2, snr_db=30, seed=4)
    st = WhitenStats.identity(60)
    for px in scene.pixels:
        a = hysudeb_unmix(lib, px, st).dense(12)
        b = lasso_cv(lib, px)[1].dense(12)
        assert np.array_equal(a, b)


def test_hysudeb_noiseless_superset_under_nonsingular_stats():
    lib = separated_library(15, 60, seed=2)
    bg = generate_scene(lib, 300, 3, snr_db=25, seed=11)
    st = compute_stats(bg.pixels)
    for seed in range(5):
        scene = generate_scene(lib, 1, 2, seed=seed)
        sol = hysudeb_unmix(lib, scene.pixels[0], st)
        assert sol.units == "whitened"
        assert set(scene.ground_truth[0]) <= set(sol.coefficients)


def test_hysudeb_dimension_check():
    lib = make_library(np.eye(3))
    with pytest.raises(DimensionMismatch):
        hysudeb_unmix(lib, [1.0, 2.0, 3.0], WhitenStats.identity(4))


def test_ace_examples():
    st = WhitenStats.identity(2)
    assert ace_score([1.0, 1.0], [1.0, 0.0], st) == pytest.approx(0.5)
    assert ace_score([0.3, 0.9], [0.3, 0.9], st) == pytest.approx(1.0)
    assert ace_score([0.0, 1.0], [1.0, 0.0], st) == 0.0


def test_select_roi():
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 1, (12, 5))
    target = X[7].copy()
    cube = Cube(X.reshape(3, 4, 5), np.arange(5.0))
    st = WhitenStats.identity(5)
    assert select_roi(cube, target, st, threshold=0.0).all()
    top = select_roi(cube, target, st, top_k=1)
    assert np.flatnonzero(top).tolist() == [7]
    with pytest.raises(InvalidThreshold):
        select_roi(cube, target, st, threshold=1.0 + 1e-9)
    with pytest.raises(InvalidThreshold):
        select_roi(cube, target, st)


def test_empty_cube():
    with pytest.raises(EmptyCube):
        compute_stats(np.zeros((0, 3)))
