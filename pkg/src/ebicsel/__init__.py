"""Feature selection for sparse linear regression via the extended BIC.

Two-stage selection (marginal screening, lasso reduction, SCAD path with
criterion-tuned penalty choice) plus a reproducible Monte Carlo study
harness for measuring positive and false discovery rates.
"""

__version__ = "0.1.0"

from .ebic import GammaPolicy, ebic_score, gamma_sc, gamma_threshold, log_binomial
from .linmodel import (
    FittedModel,
    RankDeficientError,
    SupportSet,
    eigen_bounds,
    ols_fit,
    projection_deficiency,
)
from .pipeline import PipelineConfig, SelectionResult, pdr_fdr, run_two_stage
from .simgen import (
    BetaSpec,
    CovarianceSpec,
    Dataset,
    ScheduleEntry,
    calibrate_sigma2,
    divergence_schedule,
    generate_replicate,
)
from .solvers import PenaltySpec, coordinate_descent, lambda_path, scad_threshold
from .experiment import SettingSummary, StudyConfig, derive_stream, run_study

__all__ = [
    "BetaSpec",
    "CovarianceSpec",
    "Dataset",
    "FittedModel",
    "GammaPolicy",
    "PenaltySpec",
    "PipelineConfig",
    "RankDeficientError",
    "ScheduleEntry",
    "SelectionResult",
    "SettingSummary",
    "StudyConfig",
    "SupportSet",
    "calibrate_sigma2",
    "coordinate_descent",
    "derive_stream",
    "divergence_schedule",
    "ebic_score",
    "eigen_bounds",
    "gamma_sc",
    "gamma_threshold",
    "generate_replicate",
    "lambda_path",
    "log_binomial",
    "ols_fit",
    "pdr_fdr",
    "projection_deficiency",
    "run_study",
    "run_two_stage",
    "scad_threshold",
]
