import math

import numpy as np
import pytest

from unmixkit import PixelSpectrum, SpectralLibrary, align_to_bands, residual, rmse
from unmixkit.core import make_solution
from unmixkit.errors import DimensionMismatch, EmptyInput, IndexOutOfRange, OutOfRange

from conftest import make_library


def test_residual_exact_fit():
    lib = make_library(np.eye(2))
    assert np.array_equal(residual(lib, [0.3, 0.7], {0: 0.3, 1: 0.7}), [0.0, 0.0])


def test_residual_empty_model():
    lib = make_library(np.eye(2))
    assert np.array_equal(residual(lib, [0.3, 0.7], {}), [0.3, 0.7])


def test_residual_matches_matmul():
    S = np.array([[1.0, 1.0], [0.0, 1.0]])
    lib = make_library(S)
    r = residual(lib, [1.0, 0.5], {1: 0.5})
    assert np.allclose(r, np.array([1.0, 0.5]) - S @ np.array([0.0, 0.5]))
    assert np.allclose(r, [0.5, 0.0])


def test_residual_errors():
    lib = make_library(np.eye(2))
    with pytest.raises(DimensionMismatch):
        residual(lib, [1.0, 2.0, 3.0], {})
    with pytest.raises(IndexOutOfRange):
        residual(lib, [1.0, 2.0], {5: 1.0})


def test_rmse_values():
    assert rmse([0, 0, 0]) == 0.0
    assert rmse([1]) == 1.0
    r = [3.0, 4.0]
    naive = math.sqrt(sum(v * v for v in r) / len(r))
    assert rmse(r) == pytest.approx(naive, rel=1e-15)
    assert rmse(r) == pytest.approx(3.5355339, abs=1e-7)
    with pytest.raises(EmptyInput):
        rmse([])


def test_align_midpoint():
    lib = SpectralLibrary([1.0, 2.0], [[0.2], [0.4]], ["a"], ["c"])
    out = align_to_bands(lib, [1.5])
    assert out.spectra[:, 0] == pytest.approx([0.3])


def test_align_identity_and_piecewise():
    lib = SpectralLibrary([1.0, 2.0, 3.0], [[0.0], [1.0], [0.0]], ["a"], ["c"])
    assert np.array_equal(align_to_bands(lib, [1.0, 2.0, 3.0]).spectra, lib.spectra)
    out = align_to_bands(lib, [1.25, 2.75])
    # piecewise-linear oracle: hat function of height 1 at 2
    hat = lambda x: max(0.0, 1.0 - abs(x - 2.0))
    assert out.spectra[:, 0] == pytest.approx([hat(1.25), hat(2.75)])
    with pytest.raises(OutOfRange):
        align_to_bands(lib, [0.5, 2.0])


def test_library_validation():
    with pytest.raises(ValueError):
        SpectralLibrary([1, 2], [[0.1], [-0.1]], ["a"], ["c"])
    with pytest.raises(ValueError):
        SpectralLibrary([2, 1], [[0.1], [0.1]], ["a"], ["c"])
    with pytest.raises(ValueError):
        SpectralLibrary([1, 2], [[0.1, 0.2], [0.1, 0.2]], ["a", "a"], ["c", "c"])
    with pytest.raises(DimensionMismatch):
        SpectralLibrary([1, 2, 3], [[0.1], [0.1]], ["a"], ["c"])


def test_library_is_immutable():
    lib = make_library(np.eye(3))
    with pytest.raises(AttributeError):
        lib.names = ("x",)
    with pytest.raises(ValueError):
        lib.spectra[0, 0] = 5.0
    assert lib.spectra.flags.f_contiguous
    assert lib.index_of("s1") == 1
    with pytest.raises(KeyError):
        lib.index_of("nope")


def test_pixel_rejects_nonfinite():
    with pytest.raises(ValueError):
        PixelSpectrum([1.0, np.nan])


def test_make_solution_drops_roundoff_zeros():
    S = np.eye(3)
    sol = make_solution(S, np.array([1.0, 0.0, 0.5]), np.array([1.0, 1e-18, 0.5]))
    assert sol.coefficients == {0: 1.0, 2: 0.5}
    ols = make_solution(S, np.zeros(3), np.array([1.0, -2.0, 0.0]), constrained=False)
    assert ols.coefficients == {0: 1.0, 1: -2.0}
