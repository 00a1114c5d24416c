"""Orthogonal matching pursuit with data-driven early stopping."""

from .omp import (
    ContractError,
    Dataset,
    DegenerateColumnError,
    MissingTruthError,
    NoCandidateError,
    OmpPath,
    PathDiagnostics,
    coefficients_at,
    diagnostics,
    load_csv,
    population_risk,
    run_path,
)
from .scaled_lasso import default_lambda0, lasso_cd, lasso_cv, scaled_lasso
from .stopping import (
    Sparsity,
    StoppingConfig,
    balanced_oracle,
    classical_oracle,
    hdaic,
    rate_target,
    stop_sequentially,
    tau,
    two_step,
)

__all__ = [
    "ContractError",
    "Dataset",
    "DegenerateColumnError",
    "MissingTruthError",
    "NoCandidateError",
    "OmpPath",
    "PathDiagnostics",
    "Sparsity",
    "StoppingConfig",
    "balanced_oracle",
    "classical_oracle",
    "coefficients_at",
    "default_lambda0",
    "diagnostics",
    "hdaic",
    "lasso_cd",
    "lasso_cv",
    "load_csv",
    "population_risk",
    "rate_target",
    "run_path",
    "scaled_lasso",
    "stop_sequentially",
    "tau",
    "two_step",
]
