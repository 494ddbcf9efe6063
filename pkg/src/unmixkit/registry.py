"""Name -> solver callable mapping used by the CLI and the benchmark."""
from __future__ import annotations

from functools import partial

from .minlp import MinlpConfig, minlp_unmix
from .solvers import LassoConfig, lasso_cv, lasso_solve, nnls_solve, ols_solve
from .stepwise import StepwiseConfig, dfs_select
from .whiten import WhitenStats, hysudeb_unmix

SOLVER_NAMES = ("ols", "nnls", "lasso", "dfs", "minlp", "hysudeb")


def _lasso(library, pixel, lam=None, config=None):
    if lam is not None:
        return lasso_solve(library, pixel, lam)
    return lasso_cv(library, pixel, config)[1]


def _minlp(library, pixel, config=None):
    return minlp_unmix(library, pixel, config).solution


def make_solver(name: str, *, lam: float | None = None, lasso_config: LassoConfig | None = None,
                alpha: float = 0.05, minlp_config: MinlpConfig | None = None,
                stats: WhitenStats | None = None):
    """Return ``fn(library, pixel) -> AbundanceSolution`` for a solver name.

    ``lasso`` uses a fixed ``lam`` when given and cross-validation otherwise.
    ``hysudeb`` needs image ``stats``.
    """
    if name == "ols":
        return ols_solve
    if name == "nnls":
        return nnls_solve
    if name == "lasso":
        return partial(_lasso, lam=lam, config=lasso_config)
    if name == "dfs":
        return partial(dfs_select, config=StepwiseConfig(alpha=alpha))
    if name == "minlp":
        return partial(_minlp, config=minlp_config)
    if name == "hysudeb":
        if stats is None:
            raise ValueError("hysudeb needs image statistics")
        return partial(hysudeb_unmix, stats=stats, lasso_config=lasso_config)
    raise ValueError(f"unknown solver {name!r}; choose from {', '.join(SOLVER_NAMES)}")
