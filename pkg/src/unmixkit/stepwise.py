"""Forward (depth-first) spectrum selection driven by partial F-tests."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .core import SpectralLibrary, check_pixel, make_solution
from .errors import InvalidConfig, InvalidDegreesOfFreedom
from .solvers import bounded_lstsq

_CF_EPS = 1e-12
_CF_MAX_ITER = 2000
_TINY = 1e-300

# residual sums of squares below this fraction of ||y||^2 are treated as exact fits
ZERO_RSS = 1e-20


@dataclass(frozen=True)
class StepwiseConfig:
    alpha: float = 0.05
    max_features: int | None = None
    refit_nonneg: bool = True

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidConfig("alpha must lie in (0, 1)")
        if self.max_features is not None and self.max_features < 1:
            raise InvalidConfig("max_features must be >= 1")


def _beta_cf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a > 0 and b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def f_statistic(rss_reduced: float, rss_full: float, extra_params: int, residual_df_full: int) -> float:
    """Partial F statistic for nested least-squares models."""
    if extra_params < 1 or residual_df_full < 1:
        raise InvalidDegreesOfFreedom(
            f"need extra_params >= 1 and residual df >= 1, got {extra_params}, {residual_df_full}"
        )
    if rss_full < 0 or rss_reduced < rss_full:
        raise ValueError("need rss_reduced >= rss_full >= 0")
    gain = rss_reduced - rss_full
    if rss_full == 0:
        return math.inf if gain > 0 else 0.0
    return (gain / extra_params) / (rss_full / residual_df_full)


def f_pvalue(f: float, df1: int, df2: int) -> float:
    """Upper-tail probability ``P(F(df1, df2) > f)``."""
    if df1 < 1 or df2 < 1:
        raise InvalidDegreesOfFreedom(f"degrees of freedom must be >= 1, got {df1}, {df2}")
    if f < 0 or math.isnan(f):
        raise ValueError("f must be >= 0")
    if math.isinf(f):
        return 0.0
    if f == 0:
        return 1.0
    x = df2 / (df2 + df1 * f)
    return min(1.0, max(0.0, betainc(0.5 * df2, 0.5 * df1, x)))


def _candidate_rss(S, y, selected):
    """RSS of the unconstrained LS fit after adding each column to ``selected``."""
    M, N = S.shape
    if selected:
        Q, _ = np.linalg.qr(S[:, selected])
        r = y - Q @ (Q.T @ y)
        V = S - Q @ (Q.T @ S)
    else:
        r = y.copy()
        V = S.copy()
    vv = np.einsum("ij,ij->j", V, V)
    colnorm = np.einsum("ij,ij->j", S, S)
    usable = vv > 1e-20 * np.maximum(colnorm, _TINY)
    coef = np.zeros(N)
    coef[usable] = (V[:, usable].T @ r) / vv[usable]
    R = r[:, None] - V * coef
    rss = np.einsum("ij,ij->j", R, R)
    return float(r @ r), rss


def dfs_select(library: SpectralLibrary, pixel, config: StepwiseConfig | None = None):
    """Greedy forward inclusion of library spectra.

    Each step scores every excluded spectrum by the partial F-test of adding
    it to the current least-squares model and takes the smallest p-value
    (ties: larger F, then lower index). Selection stops when the best p-value
    is not below ``alpha``, when ``max_features`` is reached, when residual
    degrees of freedom would run out, or when an NNLS refit assigns the new
    spectrum a zero abundance. Final abundances come from NNLS on the chosen
    support (or plain LS if ``refit_nonneg`` is off).
    """
    config = config or StepwiseConfig()
    t0 = time.perf_counter()
    y = check_pixel(library, pixel)
    S = library.spectra
    M, N = S.shape
    cap = config.max_features if config.max_features is not None else min(M - 1, 20)
    floor = ZERO_RSS * float(y @ y)

    selected: list[int] = []
    steps = []
    while len(selected) < min(cap, N) and M - len(selected) - 1 >= 1:
        k = len(selected)
        df2 = M - k - 1
        rss_cur, rss = _candidate_rss(S, y, selected)
        rss_cur = 0.0 if rss_cur <= floor else rss_cur
        best = None
        for j in range(N):
            if j in selected:
                continue
            rj = 0.0 if rss[j] <= floor else min(float(rss[j]), rss_cur)
            F = f_statistic(rss_cur, rj, 1, df2)
            p = f_pvalue(F, 1, df2)
            key = (p, -F, j)
            if best is None or key < best[0]:
                best = (key, j, F, p, rj)
        if best is None:
            break
        _, j, F, p, rj = best
        if not p < config.alpha:
            break
        trial = selected + [j]
        x, _ = bounded_lstsq(S[:, trial], y)
        if x[-1] <= 0:
            break
        selected = trial
        steps.append({"index": j, "f": F, "p": p, "rss": rj})

    a = np.zeros(N)
    if selected:
        if config.refit_nonneg:
            a[selected] = bounded_lstsq(S[:, selected], y)[0]
        else:
            a[selected] = np.linalg.lstsq(S[:, selected], y, rcond=None)[0]
    return make_solution(
        library, y, a, order=selected, constrained=config.refit_nonneg,
        runtime=time.perf_counter() - t0, info={"steps": steps},
    )
