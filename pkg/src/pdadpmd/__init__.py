"""Differentially private mirror descent with public-data preconditioning."""

from pdadpmd.core import (NonFiniteIterateError, RegressionDataset, RngStream,
                          Visibility)
from pdadpmd.dp import PrivacyConfig, calibrate_sigma, clip
from pdadpmd.mirror import QuadraticMirrorMap, regularize_normalize
from pdadpmd.optim import (OptimizerConfig, RunResult, dp_sgd, pda_dpmd_exact,
                           pda_dpmd_first_order, warm_start)

__version__ = "0.1.0"

__all__ = [
    "NonFiniteIterateError", "OptimizerConfig", "PrivacyConfig",
    "QuadraticMirrorMap", "RegressionDataset", "RngStream", "RunResult",
    "Visibility", "calibrate_sigma", "clip", "dp_sgd", "pda_dpmd_exact",
    "pda_dpmd_first_order", "regularize_normalize", "warm_start",
]
