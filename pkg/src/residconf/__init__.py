"""Detection and partial correction of residual confounding in daily time-series regressions.

The future exposure X_{t+J} cannot cause today's outcome, so a nonzero
coefficient on it in an otherwise adjusted model signals confounding that the
covariates failed to remove. Comparing slopes with and without that indicator
also yields a family of corrected estimates indexed by lambda.
"""

from .confound import (
    CorrectionResult,
    DetectionReport,
    PairedFit,
    SensitivityParams,
    corrected_estimate,
    corrected_variance,
    detect,
    fit_pair,
    interpret_lambda,
    lambda_sweep,
)
from .data import Schema, TimeSeriesDataset, load_dataset, make_indicator
from .errors import InputError, NumericalError, ResidconfError, SimulationError
from .glm import FitResult, ModelSpec, fit_model, wald_test
from .oracle import GaussianDGP, expected_coeffs, reference_dgp, theoretical_bias
from .simgen import ScenarioConfig, StructuredCovariateDGP, run_scenario, run_suite

__version__ = "0.1.0"

__all__ = [
    "CorrectionResult",
    "DetectionReport",
    "FitResult",
    "GaussianDGP",
    "InputError",
    "ModelSpec",
    "NumericalError",
    "PairedFit",
    "ResidconfError",
    "ScenarioConfig",
    "Schema",
    "SensitivityParams",
    "SimulationError",
    "StructuredCovariateDGP",
    "TimeSeriesDataset",
    "corrected_estimate",
    "corrected_variance",
    "detect",
    "expected_coeffs",
    "fit_model",
    "fit_pair",
    "interpret_lambda",
    "lambda_sweep",
    "load_dataset",
    "make_indicator",
    "reference_dgp",
    "run_scenario",
    "run_suite",
    "theoretical_bias",
    "wald_test",
]
