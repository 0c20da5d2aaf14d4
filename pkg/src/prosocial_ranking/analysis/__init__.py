"""Outcome indices, fixed-effects estimators, covariance and tables."""
from .attrition_models import OLSResult, attrition_models
from .covariance import CovarianceError, cov_classical, cov_cluster, cov_driscoll_kraay, default_dk_lags
from .demeaning import AbsorptionError, absorbed_dof, demean, singleton_mask
from .indices import DEFAULT_SPECS, POLARIZATION, IndexResult, IndexSpec, build_indices
from .pipeline import AnalysisConfig, AnalysisOutput, SchemaError, analyze
from .tables import render_text, results_frame, stars
from .twfe import (
    EstimateResult,
    EstimateSpec,
    EstimationError,
    dummy_variable_ols,
    estimate_heterogeneous,
    estimate_twfe,
)

__all__ = [
    "AbsorptionError",
    "AnalysisConfig",
    "AnalysisOutput",
    "CovarianceError",
    "DEFAULT_SPECS",
    "EstimateResult",
    "EstimateSpec",
    "EstimationError",
    "IndexResult",
    "IndexSpec",
    "OLSResult",
    "POLARIZATION",
    "SchemaError",
    "absorbed_dof",
    "analyze",
    "attrition_models",
    "build_indices",
    "cov_classical",
    "cov_cluster",
    "cov_driscoll_kraay",
    "default_dk_lags",
    "demean",
    "dummy_variable_ols",
    "estimate_heterogeneous",
    "estimate_twfe",
    "render_text",
    "results_frame",
    "singleton_mask",
    "stars",
]
