"""Robust mean-variance investment and reinsurance under catastrophe risk.

Closed-form coefficients, optimal controls, efficient-frontier analytics,
a diffusion-approximation variant, a Monte Carlo engine and numerical
verification of the HJBI solution.
"""

from .errors import (
    CatMMVError,
    ConditionViolated,
    DegenerateWindow,
    NonFiniteState,
    NumericalFailure,
    QuadratureFailure,
    ValidationError,
)
from .model import ModelParams, params_from_dict, params_to_dict, reference_params

__all__ = [
    "CatMMVError",
    "ConditionViolated",
    "DegenerateWindow",
    "ModelParams",
    "NonFiniteState",
    "NumericalFailure",
    "QuadratureFailure",
    "ValidationError",
    "params_from_dict",
    "params_to_dict",
    "reference_params",
]
