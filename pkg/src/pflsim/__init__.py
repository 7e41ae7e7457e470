"""Profile B-spline estimation for partial functional partially linear
single-index regression, with seeded simulation studies."""

__version__ = "0.1.0"

from .curves import FunctionalSample, Grid, center, inner_product, interpolate, load_curves
from .estimator import OptimizerConfig, ProfileFit, RegressionData, fit, predict
from .fpca import EigenSystem, ScoreMatrix, eigensystem, empirical_covariance, scores
from .splines import SplineBasis, build_index_knots, eval_basis, eval_basis_deriv

__all__ = [
    "EigenSystem",
    "FunctionalSample",
    "Grid",
    "OptimizerConfig",
    "ProfileFit",
    "RegressionData",
    "ScoreMatrix",
    "SplineBasis",
    "build_index_knots",
    "center",
    "eigensystem",
    "empirical_covariance",
    "eval_basis",
    "eval_basis_deriv",
    "fit",
    "inner_product",
    "interpolate",
    "load_curves",
    "predict",
    "scores",
]
