"""Model selection for latent variable models.

Penalized one-pass fitting with automatic size pruning for Bayesian PCA and
Gaussian mixtures, EM/BIC and variational Bayes baselines, independent
numeric oracles, and a seeded synthetic benchmark harness.
"""

from . import bpca, criteria, gmm, harness, numerics, vb
from .errors import (
    BoundaryMode,
    ContractViolation,
    DegenerateMatrix,
    LvmSelectError,
    ModelCollapsed,
    NumericalFailure,
)
from .report import FitConfig, FitReport, PruneEvent

__version__ = "0.1.0"

__all__ = [
    "bpca",
    "criteria",
    "gmm",
    "harness",
    "numerics",
    "vb",
    "FitConfig",
    "FitReport",
    "PruneEvent",
    "LvmSelectError",
    "ContractViolation",
    "DegenerateMatrix",
    "NumericalFailure",
    "ModelCollapsed",
    "BoundaryMode",
    "__version__",
]
