"""Least-squares family: OLS, active-set NNLS, nonnegative LASSO and its CV."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import AbundanceSolution, SpectralLibrary, SolverConfig, check_pixel, make_solution
from .errors import (
    InvalidConfig,
    MaxIterationsExceeded,
    SingularNormalMatrix,
    TooFewBands,
    Underdetermined,
)

COND_LIMIT = 1e12

_LOWER, _FREE, _UPPER = 0, 1, 2


@dataclass(frozen=True)
class LassoConfig:
    lam: float = 0.001
    grid_start: float = 0.001
    grid_stop: float = 0.1
    grid_step: float = 0.001
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidConfig("lambda must be >= 0")
        if self.grid_start > self.grid_stop:
            raise InvalidConfig("grid_start must be <= grid_stop")
        if not self.grid_step > 0:
            raise InvalidConfig("grid_step must be > 0")
        if self.folds < 2:
            raise InvalidConfig("folds must be >= 2")

    def grid(self) -> np.ndarray:
        n = int(np.floor((self.grid_stop - self.grid_start) / self.grid_step + 1e-9)) + 1
        return np.round(self.grid_start + self.grid_step * np.arange(n), 12)


def ols_solve(library: SpectralLibrary, pixel) -> AbundanceSolution:
    """Closed-form least squares ``a = (S^T S)^-1 S^T y`` with no sign constraint."""
    t0 = time.perf_counter()
    y = check_pixel(library, pixel)
    S = library.spectra
    M, N = S.shape
    if N > M:
        raise Underdetermined(
            f"{N} spectra but only {M} bands: the normal matrix cannot be inverted"
        )
    G = S.T @ S
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularNormalMatrix(f"normal matrix condition number {cond:.3g} exceeds {COND_LIMIT:g}")
    a = np.linalg.solve(G, S.T @ y)
    return make_solution(
        library, y, a, constrained=False, runtime=time.perf_counter() - t0,
        info={"condition": float(cond)},
    )


def bounded_lstsq(A, b, upper=None, max_iter=None, tol=None):
    """Minimise ``||A x - b||`` subject to ``0 <= x <= upper``.

    Lawson-Hanson active set extended to upper bounds (Stark & Parker).
    With ``upper=None`` this is plain Lawson-Hanson NNLS. Returns
    ``(x, iterations)``.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    M, N = A.shape
    u = np.full(N, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, float), (N,)).copy()
    if max_iter is None:
        max_iter = 3 * N
    if tol is None:
        tol = 10 * np.finfo(float).eps * max(M, N) * max(1.0, np.abs(A).sum(axis=0).max()) * max(1.0, np.abs(b).max())
    x = np.zeros(N)
    state = np.zeros(N, dtype=np.int8)
    blocked = np.zeros(N, dtype=bool)
    it = 0
    while True:
        w = A.T @ (b - A @ x)
        score = np.where((state == _LOWER) & (w > tol), w, 0.0)
        score = np.where((state == _UPPER) & (w < -tol), -w, score)
        score[blocked] = 0.0
        if not np.any(score > 0):
            break
        if it >= max_iter:
            raise MaxIterationsExceeded(f"active set did not settle in {max_iter} iterations")
        it += 1
        j = int(np.argmax(score))
        entered_from = state[j]
        state[j] = _FREE
        first = True
        while True:
            F = np.flatnonzero(state == _FREE)
            U = np.flatnonzero(state == _UPPER)
            rhs = b - A[:, U] @ u[U] if U.size else b
            z = np.linalg.lstsq(A[:, F], rhs, rcond=None)[0]
            if first:
                zj = z[np.searchsorted(F, j)]
                if (entered_from == _LOWER and zj <= 0) or (entered_from == _UPPER and zj >= u[j]):
                    # rounding made the entering variable move the wrong way
                    state[j] = entered_from
                    blocked[j] = True
                    break
                first = False
            xF = x[F]
            low = z <= 0
            high = z >= u[F]
            if not (low.any() or high.any()):
                x[F] = z
                blocked[:] = False
                break
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.full(F.size, np.inf)
                step[low] = xF[low] / (xF[low] - z[low])
                step[high] = (u[F][high] - xF[high]) / (z[high] - xF[high])
            k = int(np.argmin(step))
            alpha = float(np.clip(step[k], 0.0, 1.0))
            x[F] = xF + alpha * (z - xF)
            hit_low = (x[F] <= 1e-15 * max(1.0, np.abs(xF).max())) & low
            hit_high = (x[F] >= u[F]) & high
            if low[k]:
                hit_low[k] = True
            else:
                hit_high[k] = True
            lo_idx = F[hit_low]
            hi_idx = F[hit_high & ~hit_low]
            x[lo_idx] = 0.0
            state[lo_idx] = _LOWER
            x[hi_idx] = u[hi_idx]
            state[hi_idx] = _UPPER
            blocked[:] = False
            if not np.any(state == _FREE):
                break
    return x, it


def nnls_solve(library: SpectralLibrary, pixel, config: SolverConfig | None = None):
    """Nonnegative least squares via the Lawson-Hanson active-set method.

    The default iteration cap is ``3 N`` active-set additions; a
    ``SolverConfig`` may override it through ``max_iter``.
    """
    t0 = time.perf_counter()
    y = check_pixel(library, pixel)
    max_iter = None if config is None else config.max_iter
    a, it = bounded_lstsq(library.spectra, y, max_iter=max_iter)
    return make_solution(library, y, a, runtime=time.perf_counter() - t0, info={"iterations": it})


@njit(cache=True)
def _objective(c, yy, m, lam, a, g):
    obj = yy
    l1 = 0.0
    for k in range(a.size):
        obj += a[k] * g[k] - 2.0 * c[k] * a[k]
        l1 += a[k]
    return obj / m + lam * l1


@njit(cache=True)
def _cholesky_solve(G, idx, rhs):
    k = idx.size
    L = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1):
            s = G[idx[i], idx[j]]
            for q in range(j):
                s -= L[i, q] * L[j, q]
            if i == j:
                if s <= 1e-13 * G[idx[i], idx[i]]:
                    return np.empty(0)
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    z = np.empty(k)
    for i in range(k):
        s = rhs[i]
        for q in range(i):
            s -= L[i, q] * z[q]
        z[i] = s / L[i, i]
    for i in range(k - 1, -1, -1):
        s = z[i]
        for q in range(i + 1, k):
            s -= L[q, i] * z[q]
        z[i] = s / L[i, i]
    return z


@njit(cache=True)
def _face_step(G, c, thr, a, g):
    # Primal active-set pass on the face {a_j = 0 for a_j == 0}: step toward
    # the face minimiser, drop the first coordinate that reaches zero, repeat.
    # Each step moves along a segment of a convex quadratic toward its
    # minimiser, so the objective never rises.
    n = a.size
    for _ in range(n + 1):
        k = 0
        for j in range(n):
            if a[j] > 0.0:
                k += 1
        if k == 0:
            return
        idx = np.empty(k, dtype=np.int64)
        rhs = np.empty(k)
        k = 0
        for j in range(n):
            if a[j] > 0.0:
                idx[k] = j
                rhs[k] = c[j] - thr
                k += 1
        z = _cholesky_solve(G, idx, rhs)
        if z.size == 0:
            return
        t = 1.0
        hit = -1
        for i in range(k):
            if z[i] <= 0.0:
                ai = a[idx[i]]
                ti = ai / (ai - z[i])
                if ti < t:
                    t = ti
                    hit = i
        for i in range(k):
            j = idx[i]
            target = a[j] + t * (z[i] - a[j])
            if i == hit or target < 0.0:
                target = 0.0
            d = target - a[j]
            if d != 0.0:
                a[j] = target
                for q in range(n):
                    g[q] += G[q, j] * d
        if hit < 0:
            return


@njit(cache=True)
def _cd_kernel(G, c, yy, m, lam, a, g, tol, max_iter, history):
    # cyclic nonnegative coordinate descent on (1/m)||y - S a||^2 + lam*||a||_1;
    # g holds G @ a. Once the active set repeats between sweeps, the exact
    # minimiser on that face is tried before the next sweep.
    n = a.size
    thr = 0.5 * lam * m
    nh = history.size
    if nh > 0:
        history[0] = _objective(c, yy, m, lam, a, g)
    active = np.zeros(n, dtype=np.bool_)
    prev = np.zeros(n, dtype=np.bool_)
    for j in range(n):
        prev[j] = a[j] > 0.0
    for sweep in range(max_iter):
        maxchange = 0.0
        for j in range(n):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = a[j]
            new = (c[j] - g[j] + gjj * old - thr) / gjj
            if new < 0.0:
                new = 0.0
            d = new - old
            if d != 0.0:
                a[j] = new
                for k in range(n):
                    g[k] += G[k, j] * d
                ad = abs(d)
                if ad > maxchange:
                    maxchange = ad
        if sweep + 1 < nh:
            history[sweep + 1] = _objective(c, yy, m, lam, a, g)
        if maxchange < tol:
            return sweep + 1
        same = True
        for j in range(n):
            active[j] = a[j] > 0.0
            if active[j] != prev[j]:
                same = False
            prev[j] = active[j]
        if same:
            _face_step(G, c, thr, a, g)
            for j in range(n):
                prev[j] = a[j] > 0.0
    return -max_iter


@njit(cache=True)
def _cv_kernel(S, y, fold_of, n_folds, grid_desc, tol, max_iter):
    # summed held-out MSE per lambda over folds; negative status on non-convergence
    M, N = S.shape
    errors = np.zeros(grid_desc.size)
    empty = np.empty(0)
    for f in range(n_folds):
        n_test = 0
        for i in range(M):
            if fold_of[i] == f:
                n_test += 1
        train = np.empty(M - n_test, dtype=np.int64)
        test = np.empty(n_test, dtype=np.int64)
        p = 0
        q = 0
        for i in range(M):
            if fold_of[i] == f:
                test[q] = i
                q += 1
            else:
                train[p] = i
                p += 1
        St = np.ascontiguousarray(S[train])
        yt = y[train]
        G = St.T @ St
        c = St.T @ yt
        yy = yt @ yt
        a = np.zeros(N)
        g = np.zeros(N)
        for li in range(grid_desc.size):
            status = _cd_kernel(G, c, yy, float(M - n_test), grid_desc[li], a, g, tol, max_iter, empty)
            if status < 0:
                return errors, -1
            err = 0.0
            for t in range(n_test):
                r = y[test[t]]
                for j in range(N):
                    if a[j] != 0.0:
                        r -= S[test[t], j] * a[j]
                err += r * r
            errors[li] += err / n_test
    for li in range(grid_desc.size):
        errors[li] /= n_folds
    return errors, 0


def lasso_objective(S, y, a, lam) -> float:
    r = y - S @ a
    return float(r @ r / y.size + lam * np.abs(a).sum())


def _coordinate_descent(G, c, yy, m, lam, a0, tol, max_iter, record=False):
    a = np.array(a0, dtype=np.float64)
    g = G @ a
    history = np.empty(max_iter + 1 if record else 0)
    sweeps = _cd_kernel(G, c, float(yy), float(m), float(lam), a, g, float(tol), int(max_iter), history)
    if sweeps < 0:
        raise MaxIterationsExceeded(f"coordinate descent did not converge in {max_iter} sweeps")
    return a, sweeps, history[: sweeps + 1] if record else None


def _polish(G, c, yy, m, lam, a):
    """Solve the stationarity system on the active set exactly; keep it if optimal."""
    active = np.flatnonzero(a > 0)
    if active.size == 0:
        return a
    thr = 0.5 * lam * m
    try:
        z = np.linalg.solve(G[np.ix_(active, active)], c[active] - thr)
    except np.linalg.LinAlgError:
        return a
    if np.any(z <= 0):
        return a
    cand = np.zeros_like(a)
    cand[active] = z
    grad = c - G @ cand
    slack = 1e-9 * max(1.0, np.abs(c).max())
    inactive = np.ones(a.size, dtype=bool)
    inactive[active] = False
    if np.any(grad[inactive] > thr + slack):
        return a

    def obj(v):
        return (yy - 2 * c @ v + v @ G @ v) / m + lam * v.sum()

    return cand if obj(cand) <= obj(a) + 1e-15 * max(1.0, abs(obj(a))) else a


def lasso_fit(S, y, lam: float, config: SolverConfig | None = None, record_history: bool = False):
    """Array-level nonnegative LASSO; returns ``(a, info)``."""
    if lam < 0:
        raise InvalidConfig("lambda must be >= 0")
    config = config or SolverConfig()
    M, N = S.shape
    G = S.T @ S
    c = S.T @ y
    yy = float(y @ y)
    a, sweeps, hist = _coordinate_descent(G, c, yy, M, lam, np.zeros(N), config.tol, config.max_iter,
                                          record=record_history)
    a = _polish(G, c, yy, M, lam, a)
    info = {"lambda": float(lam), "sweeps": int(sweeps)}
    if record_history:
        info["objective_history"] = hist.tolist()
    return a, info


def lasso_solve(library: SpectralLibrary, pixel, lam: float, config: SolverConfig | None = None,
                record_history: bool = False):
    """Nonnegative LASSO ``min (1/M)||y - S a||^2 + lam ||a||_1, a >= 0``.

    Cyclic coordinate descent run until the largest coefficient change in a
    sweep falls below ``config.tol``, then an exact solve on the active set.
    With ``record_history`` the per-sweep objective values land in
    ``solution.info["objective_history"]``.
    """
    t0 = time.perf_counter()
    y = check_pixel(library, pixel)
    a, info = lasso_fit(library.spectra, y, lam, config, record_history)
    return make_solution(library, y, a, runtime=time.perf_counter() - t0, info=info)


def cv_folds(n_bands: int, folds: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n_bands)
    return [np.sort(f) for f in np.array_split(perm, folds)]


def lasso_cv_curve(S: np.ndarray, y: np.ndarray, config: LassoConfig,
                   solver: SolverConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean held-out-band squared error for every lambda in the grid.

    Each fold walks the grid from the largest lambda down, warm-starting
    from the previous solution.
    """
    solver = solver or SolverConfig()
    M, N = S.shape
    if M < config.folds:
        raise TooFewBands(f"{M} bands cannot be split into {config.folds} folds")
    grid = config.grid()
    order = np.argsort(grid, kind="stable")[::-1]
    fold_of = np.empty(M, dtype=np.int64)
    for f, idx in enumerate(cv_folds(M, config.folds, config.seed)):
        fold_of[idx] = f
    errs, status = _cv_kernel(np.ascontiguousarray(S, dtype=np.float64), np.ascontiguousarray(y, dtype=np.float64),
                              fold_of, config.folds, np.ascontiguousarray(grid[order]), float(solver.tol),
                              int(solver.max_iter))
    if status < 0:
        raise MaxIterationsExceeded(f"coordinate descent did not converge in {solver.max_iter} sweeps")
    errors = np.empty(grid.size)
    errors[order] = errs
    return grid, errors


def pick_lambda(grid: np.ndarray, errors: np.ndarray) -> float:
    best = errors.min()
    ties = errors <= best + 1e-12 * abs(best)
    return float(grid[ties].max())


def lasso_cv_fit(S, y, config: LassoConfig | None = None, solver: SolverConfig | None = None):
    """Array-level CV + refit; returns ``(best_lambda, a, info)``."""
    config = config or LassoConfig()
    grid, errors = lasso_cv_curve(S, y, config, solver)
    lam = pick_lambda(grid, errors)
    a, info = lasso_fit(S, y, lam, solver)
    info.update({"cv_grid": grid.tolist(), "cv_error": errors.tolist()})
    return lam, a, info


def lasso_cv(library: SpectralLibrary, pixel, config: LassoConfig | None = None,
             solver: SolverConfig | None = None):
    """Pick lambda by k-fold CV over spectral bands, then refit on all bands.

    Bands are shuffled with ``config.seed`` and split into contiguous folds.
    Equal CV errors resolve toward the larger lambda. Returns
    ``(best_lambda, solution)``.
    """
    t0 = time.perf_counter()
    y = check_pixel(library, pixel)
    lam, a, info = lasso_cv_fit(library.spectra, y, config, solver)
    return lam, make_solution(library, y, a, runtime=time.perf_counter() - t0, info=info)
