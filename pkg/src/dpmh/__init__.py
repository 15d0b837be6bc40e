"""Differentially private minibatch Metropolis-Hastings with diagnostics."""

from .errors import (
    ConfigurationError,
    DataValidationError,
    DiagnosticsError,
    DpmhError,
    InvariantViolationError,
    NumericError,
)
from .models import (
    BoxDomain,
    EnergyModel,
    GaussianMixtureModel,
    LogisticRegressionModel,
    energy_diff_sum,
    generate_mixture_data,
    load_feature_csv,
)
from .privacy import (
    NoiseCalibration,
    PrivacyLedger,
    amplify_subsampled,
    calibrate,
    compose_advanced,
    ledger_record,
    sensitivity_l1,
    sensitivity_l2,
)
from .samplers import (
    ChainState,
    SamplerConfig,
    StepRecord,
    dpfast_step,
    form_batch,
    mh_ratio_minibatch,
    penalty_step,
    propose,
    run_chain,
)

__all__ = [
    "BoxDomain",
    "ChainState",
    "ConfigurationError",
    "DataValidationError",
    "DiagnosticsError",
    "DpmhError",
    "EnergyModel",
    "GaussianMixtureModel",
    "InvariantViolationError",
    "LogisticRegressionModel",
    "NoiseCalibration",
    "NumericError",
    "PrivacyLedger",
    "SamplerConfig",
    "StepRecord",
    "amplify_subsampled",
    "calibrate",
    "compose_advanced",
    "dpfast_step",
    "energy_diff_sum",
    "form_batch",
    "generate_mixture_data",
    "ledger_record",
    "load_feature_csv",
    "mh_ratio_minibatch",
    "penalty_step",
    "propose",
    "run_chain",
    "sensitivity_l1",
    "sensitivity_l2",
]

__version__ = "0.1.0"
