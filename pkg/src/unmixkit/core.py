"""Domain types and residual math for the linear mixture model ``y = S a + E``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyInput,
    IndexOutOfRange,
    InvalidConfig,
    OutOfRange,
)

REFLECTANCE = "reflectance"
WHITENED = "whitened"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class SpectralLibrary:
    """N reference spectra sampled on a shared grid of M bands.

    ``spectra`` is an M x N matrix whose column ``i`` is spectrum ``i``. It is
    stored Fortran-ordered so each spectrum is contiguous in memory.
    """

    __slots__ = ("band_wavelengths", "spectra", "names", "categories")

    def __init__(self, band_wavelengths, spectra, names: Sequence[str], categories: Sequence[str]):
        wl = np.array(band_wavelengths, dtype=np.float64).ravel()
        S = np.array(spectra, dtype=np.float64, order="F")
        if S.ndim == 1:
            S = S.reshape(-1, 1, order="F")
        if S.ndim != 2:
            raise DimensionMismatch("spectra must be a 2-D (bands x spectra) matrix")
        M, N = S.shape
        if wl.size != M:
            raise DimensionMismatch(f"{wl.size} wavelengths for {M} bands")
        if len(names) != N or len(categories) != N:
            raise DimensionMismatch("names/categories must have one entry per spectrum")
        if M == 0 or N == 0:
            raise EmptyInput("library needs at least one band and one spectrum")
        if not np.all(np.isfinite(S)):
            raise ValueError("library reflectance must be finite")
        if np.any(S < 0):
            raise ValueError("library reflectance must be >= 0")
        if M > 1 and not np.all(np.diff(wl) > 0):
            raise ValueError("band wavelengths must be strictly increasing")
        names = tuple(str(n) for n in names)
        if len(set(names)) != len(names):
            raise ValueError("spectrum names must be unique")
        categories = tuple(str(c) for c in categories)
        if any(not c for c in categories):
            raise ValueError("categories must be non-empty strings")
        object.__setattr__(self, "band_wavelengths", _frozen(wl))
        object.__setattr__(self, "spectra", _frozen(S))
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "categories", categories)

    def __setattr__(self, key, value):
        raise AttributeError("SpectralLibrary is immutable")

    @property
    def n_bands(self) -> int:
        return self.spectra.shape[0]

    @property
    def n_spectra(self) -> int:
        return self.spectra.shape[1]

    def __len__(self) -> int:
        return self.n_spectra

    def __repr__(self) -> str:
        return f"SpectralLibrary(M={self.n_bands}, N={self.n_spectra})"

    def column(self, i: int) -> np.ndarray:
        return self.spectra[:, i]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None

    def indices_in_category(self, category: str) -> list[int]:
        return [i for i, c in enumerate(self.categories) if c == category]

    def subset(self, indices: Sequence[int]) -> "SpectralLibrary":
        idx = list(indices)
        return SpectralLibrary(
            self.band_wavelengths,
            self.spectra[:, idx],
            [self.names[i] for i in idx],
            [self.categories[i] for i in idx],
        )


@dataclass(frozen=True)
class PixelSpectrum:
    """One observed reflectance vector."""

    values: np.ndarray
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("pixel reflectance must be finite")
        object.__setattr__(self, "values", _frozen(v))
        if self.wavelengths is not None:
            wl = np.array(self.wavelengths, dtype=np.float64).ravel()
            if wl.size != v.size:
                raise DimensionMismatch(f"{wl.size} wavelengths for {v.size} values")
            object.__setattr__(self, "wavelengths", _frozen(wl))

    def __len__(self) -> int:
        return self.values.size


@dataclass
class AbundanceSolution:
    """Output of any unmixing solver.

    ``coefficients`` maps library index to abundance with zeros omitted and
    ``selected`` lists the same indices in the order the solver chose them.
    Solutions from unconstrained OLS set ``constrained=False`` and may carry
    negative coefficients. ``units`` is ``"whitened"`` when the residual lives
    in decorrelated band space.
    """

    coefficients: dict[int, float]
    residual: np.ndarray
    rmse: float
    runtime: float = 0.0
    selected: list[int] = field(default_factory=list)
    constrained: bool = True
    units: str = REFLECTANCE
    info: dict = field(default_factory=dict)

    def dense(self, n: int) -> np.ndarray:
        a = np.zeros(n)
        for i, v in self.coefficients.items():
            a[i] = v
        return a


@dataclass(frozen=True)
class SolverConfig:
    nonneg: bool = True
    max_iter: int = 100_000
    tol: float = 1e-8

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidConfig("tol must be > 0")
        if self.max_iter < 1:
            raise InvalidConfig("max_iter must be >= 1")


def as_values(pixel) -> np.ndarray:
    if isinstance(pixel, PixelSpectrum):
        return pixel.values
    return np.asarray(pixel, dtype=np.float64).ravel()


def check_pixel(library: SpectralLibrary, pixel) -> np.ndarray:
    y = as_values(pixel)
    if y.size != library.n_bands:
        raise DimensionMismatch(f"pixel has {y.size} bands, library has {library.n_bands}")
    return y


def residual(library: SpectralLibrary, pixel, coeffs: Mapping[int, float]) -> np.ndarray:
    """Return ``y - S a`` for a sparse abundance map."""
    y = check_pixel(library, pixel)
    r = y.copy()
    N = library.n_spectra
    for i, a in coeffs.items():
        i = int(i)
        if not 0 <= i < N:
            raise IndexOutOfRange(f"coefficient index {i} outside library of {N} spectra")
        r -= a * library.spectra[:, i]
    return r


def rmse(res) -> float:
    r = np.asarray(res, dtype=np.float64).ravel()
    if r.size == 0:
        raise EmptyInput("rmse of an empty residual")
    return float(np.sqrt(np.mean(r * r)))


SUPPORT_RTOL = 1e-12


def make_solution(
    library: SpectralLibrary,
    y: np.ndarray,
    a: np.ndarray,
    *,
    order: Sequence[int] | None = None,
    constrained: bool = True,
    runtime: float = 0.0,
    units: str = REFLECTANCE,
    info: dict | None = None,
) -> AbundanceSolution:
    """Pack a dense coefficient vector into an :class:`AbundanceSolution`.

    ``library`` may be any object exposing an M x N ``spectra`` matrix; the
    residual is computed against it, so whitened designs work too.
    """
    if order is None:
        order = range(a.size)
    if constrained and a.size:
        # round-off survivors of a degenerate (exact-fit) active set
        a = np.where(a > SUPPORT_RTOL * np.abs(a).max(), a, 0.0)
    if constrained:
        coeffs = {int(i): float(a[i]) for i in order if a[i] > 0}
    else:
        coeffs = {int(i): float(a[i]) for i in order if a[i] != 0}
    S = library.spectra if hasattr(library, "spectra") else np.asarray(library)
    r = y - S @ a
    return AbundanceSolution(
        coefficients=coeffs,
        residual=r,
        rmse=rmse(r),
        runtime=runtime,
        selected=list(coeffs),
        constrained=constrained,
        units=units,
        info=info or {},
    )


def align_to_bands(library: SpectralLibrary, target_wavelengths) -> SpectralLibrary:
    """Linearly interpolate every spectrum onto ``target_wavelengths``."""
    tw = np.asarray(target_wavelengths, dtype=np.float64).ravel()
    if tw.size == 0:
        raise EmptyInput("empty target wavelength grid")
    if tw.size > 1 and not np.all(np.diff(tw) > 0):
        raise OutOfRange("target wavelengths must be strictly increasing")
    wl = library.band_wavelengths
    if tw[0] < wl[0] or tw[-1] > wl[-1]:
        raise OutOfRange(
            f"target grid [{tw[0]}, {tw[-1]}] exceeds library range [{wl[0]}, {wl[-1]}]"
        )
    if tw.size == wl.size and np.array_equal(tw, wl):
        return library
    S = np.empty((tw.size, library.n_spectra), order="F")
    for i in range(library.n_spectra):
        S[:, i] = np.interp(tw, wl, library.spectra[:, i])
    return SpectralLibrary(tw, S, library.names, library.categories)
