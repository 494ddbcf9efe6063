"""Band decorrelation from image statistics, whitened LASSO unmixing and ACE detection."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import WHITENED, SpectralLibrary, as_values, check_pixel, make_solution
from .errors import DimensionMismatch, EmptyCube, InvalidThreshold
from .solvers import LassoConfig, SolverConfig, lasso_cv_fit

EIG_FLOOR = 1e-8


def pixel_matrix(cube) -> np.ndarray:
    """Coerce a cube-like input to a (pixels x bands) float64 matrix.

    Accepts a sequence of :class:`PixelSpectrum`, a 2-D array of pixel rows,
    a (lines, samples, bands) array, or anything with a ``data`` attribute of
    that shape.
    """
    if hasattr(cube, "data") and isinstance(getattr(cube, "data"), np.ndarray):
        cube = cube.data
    if isinstance(cube, np.ndarray):
        X = np.asarray(cube, dtype=np.float64)
        if X.ndim == 3:
            X = X.reshape(-1, X.shape[-1])
        elif X.ndim == 1:
            X = X.reshape(1, -1)
    else:
        rows = [as_values(p) for p in cube]
        if not rows:
            raise EmptyCube("cube has no pixels")
        X = np.vstack(rows)
    if X.shape[0] == 0:
        raise EmptyCube("cube has no pixels")
    return X


def _fix_signs(E: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each eigenvector made positive
    idx = np.argmax(np.abs(E), axis=0)
    signs = np.sign(E[idx, np.arange(E.shape[1])])
    signs[signs == 0] = 1.0
    return E * signs


@dataclass(frozen=True)
class WhitenStats:
    """Band statistics and the PCA whitening transform ``W = L^(-1/2) E^T``.

    Eigenvalues are sorted descending and floored at ``regularization`` before
    inversion, so rank-deficient covariances still give a finite transform.
    """

    mean: np.ndarray
    covariance: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    transform: np.ndarray
    regularization: float

    @property
    def n_bands(self) -> int:
        return self.mean.size

    @classmethod
    def from_covariance(cls, mean, covariance, regularization: float | None = None) -> "WhitenStats":
        mu = np.array(mean, dtype=np.float64).ravel()
        C = np.array(covariance, dtype=np.float64)
        if C.shape != (mu.size, mu.size):
            raise DimensionMismatch(f"covariance {C.shape} does not match {mu.size} bands")
        C = 0.5 * (C + C.T)
        vals, vecs = np.linalg.eigh(C)
        order = np.argsort(-vals, kind="stable")
        vals = vals[order]
        vecs = _fix_signs(vecs[:, order])
        if regularization is None:
            top = float(vals[0]) if vals.size else 0.0
            regularization = EIG_FLOOR * top if top > 0 else EIG_FLOOR
        floored = np.maximum(vals, regularization)
        W = (vecs / np.sqrt(floored)).T
        for arr in (mu, C, vals, vecs, W):
            arr.setflags(write=False)
        return cls(mu, C, vals, vecs, W, float(regularization))

    @classmethod
    def identity(cls, n_bands: int) -> "WhitenStats":
        """Zero mean, unit covariance: whitening is a no-op."""
        return cls.from_covariance(np.zeros(n_bands), np.eye(n_bands))


def compute_stats(cube, regularization: float | None = None) -> WhitenStats:
    """Sample mean and covariance (denominator ``n - 1``) of a pixel collection."""
    X = pixel_matrix(cube)
    n = X.shape[0]
    mu = X.mean(axis=0)
    D = X - mu
    # deviations at the level of the mean's round-off are not variance
    D[np.abs(D) <= 8 * np.finfo(float).eps * np.abs(X).max(axis=0)] = 0.0
    C = (D.T @ D) / max(n - 1, 1)
    return WhitenStats.from_covariance(mu, C, regularization)


def _check_len(stats: WhitenStats, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != stats.n_bands:
        raise DimensionMismatch(f"spectrum has {x.shape[-1]} bands, stats have {stats.n_bands}")
    return x


def whiten_spectrum(stats: WhitenStats, spectrum) -> np.ndarray:
    x = _check_len(stats, as_values(spectrum))
    return stats.transform @ (x - stats.mean)


def whiten_matrix(stats: WhitenStats, X, center: bool = True) -> np.ndarray:
    """Whiten the rows of a (pixels x bands) matrix."""
    X = _check_len(stats, np.asarray(X, dtype=np.float64))
    if center:
        X = X - stats.mean
    return X @ stats.transform.T


def hysudeb_unmix(library: SpectralLibrary, pixel, stats: WhitenStats,
                  lasso_config: LassoConfig | None = None, *, center: bool = False,
                  solver: SolverConfig | None = None):
    """Whiten the library and pixel with image statistics, then run CV LASSO.

    By default only the linear part ``W`` of the whitening map is applied, so
    ``W y = (W S) a`` keeps the mixture model exact for any abundances.
    ``center=True`` also subtracts the image mean from both the pixel and
    every library spectrum; that variant only preserves the mixture when the
    abundances sum to one.

    Residual and RMSE are in whitened units (``units == "whitened"``) and
    are not comparable with reflectance-space RMSE.
    """
    t0 = time.perf_counter()
    y = check_pixel(library, pixel)
    if stats.n_bands != library.n_bands:
        raise DimensionMismatch(f"stats have {stats.n_bands} bands, library has {library.n_bands}")
    Sw = whiten_matrix(stats, library.spectra.T, center=center).T
    yw = whiten_matrix(stats, y[None, :], center=center)[0]
    lam, a, info = lasso_cv_fit(Sw, yw, lasso_config, solver)
    info["centered"] = center
    return make_solution(Sw, yw, a, runtime=time.perf_counter() - t0, units=WHITENED, info=info)


def _ace(xw: np.ndarray, tw: np.ndarray) -> np.ndarray:
    tt = float(tw @ tw)
    xx = np.einsum("ij,ij->i", xw, xw)
    tx = xw @ tw
    out = np.zeros(xw.shape[0])
    ok = (xx > 0) & (tt > 0)
    out[ok] = tx[ok] ** 2 / (tt * xx[ok])
    return np.clip(out, 0.0, 1.0)


def ace_score(pixel, target_spectrum, stats: WhitenStats) -> float:
    """Adaptive coherence estimator: squared cosine of whitened pixel and target."""
    xw = whiten_spectrum(stats, pixel)
    tw = whiten_spectrum(stats, target_spectrum)
    return float(_ace(xw[None, :], tw)[0])


def ace_scores(cube, target_spectrum, stats: WhitenStats) -> np.ndarray:
    X = pixel_matrix(cube)
    return _ace(whiten_matrix(stats, X), whiten_spectrum(stats, target_spectrum))


@dataclass
class AceScoreMap:
    scores: np.ndarray
    target_name: str
    threshold: float | None = None

    def mask(self) -> np.ndarray:
        if self.threshold is None:
            raise InvalidThreshold("no threshold set on this score map")
        return self.scores >= self.threshold


def select_roi(cube, target_spectrum, stats: WhitenStats, threshold: float | None = None,
               top_k: int | None = None) -> np.ndarray:
    """Boolean pixel mask from ACE scores.

    Give exactly one of ``threshold`` (keep scores >= threshold) or ``top_k``
    (keep the k best, ties to the lower pixel index).
    """
    if (threshold is None) == (top_k is None):
        raise InvalidThreshold("give exactly one of threshold or top_k")
    scores = ace_scores(cube, target_spectrum, stats)
    if threshold is not None:
        if not 0.0 <= threshold <= 1.0:
            raise InvalidThreshold(f"threshold {threshold} outside [0, 1]")
        return scores >= threshold
    if not 1 <= top_k <= scores.size:
        raise InvalidThreshold(f"top_k {top_k} outside [1, {scores.size}]")
    order = np.lexsort((np.arange(scores.size), -scores))
    mask = np.zeros(scores.size, dtype=bool)
    mask[order[:top_k]] = True
    return mask
