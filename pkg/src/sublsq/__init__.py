"""Randomized subsystem least squares: draw small random subproblems, solve, filter, average."""

__version__ = "0.1.0"

from .core import (
    Problem,
    Solution,
    SubProblem,
    build_subproblem,
    full_least_squares,
    gaussian_linear_problem,
    residue_norm,
    smallest_gram_eigenvalue,
    solve_subproblem,
)
from .errors import (
    ConfigurationError,
    DimensionError,
    DomainError,
    EvaluationError,
    FitError,
    GeometryError,
    GridError,
    ParseError,
    RankDeficiencyError,
    SublsqError,
    ThresholdTooHighError,
    VerificationFailure,
)
from .estimator import EstimatorConfig, RunResult, confidence_region, empirical_K_q, run_estimator
from .sampling import DiscreteUniform, DrawSeed, GaussianStandard, NoisyLinear, ProductScalar, draw_points

__all__ = [
    "ConfigurationError", "DimensionError", "DiscreteUniform", "DomainError", "DrawSeed", "EstimatorConfig",
    "EvaluationError", "FitError", "GaussianStandard", "GeometryError", "GridError", "NoisyLinear",
    "ParseError", "Problem", "ProductScalar", "RankDeficiencyError", "RunResult", "Solution", "SubProblem",
    "SublsqError", "ThresholdTooHighError", "VerificationFailure", "build_subproblem", "confidence_region",
    "draw_points", "empirical_K_q", "full_least_squares", "gaussian_linear_problem", "residue_norm",
    "run_estimator", "smallest_gram_eigenvalue", "solve_subproblem",
]
