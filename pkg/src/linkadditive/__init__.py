"""Two-stage estimation of additive models with a known link function."""
from .basis import Basis, BasisSpec, build_basis, gram_check
from .data import DataError, Dataset, load_csv, make_dataset
from .first_stage import FirstStageConfig, FirstStageFit, IdentifiabilityError, fit_first_stage, q_hat_diagnostic
from .kernels import Kernel, quartic_kernel
from .link import Link, get_link, identity_link, logit_link
from .second_stage import (
    ComponentEstimate,
    DegenerateWindow,
    SecondStageConfig,
    estimate_component,
    local_constant_step,
    local_linear_step,
    pilot_from_fit,
    variance_min_weight,
)

__version__ = "0.1.0"

__all__ = [
    "Basis",
    "BasisSpec",
    "ComponentEstimate",
    "DataError",
    "Dataset",
    "DegenerateWindow",
    "FirstStageConfig",
    "FirstStageFit",
    "IdentifiabilityError",
    "Kernel",
    "Link",
    "SecondStageConfig",
    "build_basis",
    "estimate_component",
    "fit_first_stage",
    "get_link",
    "gram_check",
    "identity_link",
    "load_csv",
    "local_constant_step",
    "local_linear_step",
    "logit_link",
    "make_dataset",
    "pilot_from_fit",
    "q_hat_diagnostic",
    "quartic_kernel",
    "variance_min_weight",
]
