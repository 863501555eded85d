"""Gaussian-process channel prediction with uncertain measurement locations."""

from .exceptions import (
    ConfigError,
    DegenerateDataError,
    DegreeTooHighError,
    DomainError,
    NonPSDError,
    RankError,
    UGPError,
    UnsupportedKernelError,
)
from .experiments import (
    ExperimentConfig,
    ExperimentResult,
    MetricRow,
    run_experiment,
    run_learning_sweep,
    run_prediction_uncertain_test,
    run_prediction_uncertain_training,
    run_resource_allocation,
)
from .field import (
    ChannelField,
    FieldConfig,
    LocationDistribution,
    Locations,
    generate_shadowing_field,
    perturb_location,
    received_power_at,
    sample_measurement,
)
from .kernels import (
    Hyperparameters,
    PolyLogApprox,
    cov_classical,
    cov_expected,
    expected_mean,
    fit_log10_polynomial,
)
from .learning import (
    calibrate_sigma_proc_offline,
    learn_cgp,
    learn_gagp,
    learn_mcgp,
    learn_ugp,
    nll,
)
from .model import KINDS, LearnedModel, Posterior, TrainingSet, make_training_set
from .prediction import predict_cgp, predict_mcgp, predict_ugp

__version__ = "0.1.0"

__all__ = [
    "calibrate_sigma_proc_offline",
    "ChannelField",
    "ConfigError",
    "cov_classical",
    "cov_expected",
    "DegenerateDataError",
    "DegreeTooHighError",
    "DomainError",
    "expected_mean",
    "ExperimentConfig",
    "ExperimentResult",
    "FieldConfig",
    "fit_log10_polynomial",
    "generate_shadowing_field",
    "Hyperparameters",
    "KINDS",
    "learn_cgp",
    "learn_gagp",
    "learn_mcgp",
    "learn_ugp",
    "LearnedModel",
    "LocationDistribution",
    "Locations",
    "make_training_set",
    "MetricRow",
    "nll",
    "NonPSDError",
    "perturb_location",
    "PolyLogApprox",
    "Posterior",
    "predict_cgp",
    "predict_mcgp",
    "predict_ugp",
    "RankError",
    "received_power_at",
    "run_experiment",
    "run_learning_sweep",
    "run_prediction_uncertain_test",
    "run_prediction_uncertain_training",
    "run_resource_allocation",
    "sample_measurement",
    "TrainingSet",
    "UGPError",
    "UnsupportedKernelError",
]
