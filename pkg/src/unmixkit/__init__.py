"""Sparse linear unmixing of hyperspectral pixels against a spectral library."""
from .core import (REFLECTANCE, WHITENED, AbundanceSolution, PixelSpectrum, SolverConfig, SpectralLibrary,
                   align_to_bands, residual, rmse)
from .errors import UnmixError
from .metrics import (EvalReport, RankedModel, average_precision, benchmark, detection_percentage,
                      mean_average_precision, precision_at_k)
from .minlp import Cardinality, MinlpConfig, MinlpResult, minlp_unmix
from .solvers import LassoConfig, bounded_lstsq, lasso_cv, lasso_solve, nnls_solve, ols_solve
from .stepwise import StepwiseConfig, dfs_select, f_pvalue, f_statistic
from .whiten import WhitenStats, ace_score, compute_stats, hysudeb_unmix, select_roi, whiten_spectrum

__version__ = "0.1.0"
