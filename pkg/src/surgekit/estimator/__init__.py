"""Sequence model that maps outage covariate windows to surge components."""

from .features import (
    FEATURE_NAMES,
    TARGET_NAMES,
    EventFeatures,
    featurize,
    featurize_events,
)
from .gradcheck import GradCheckResult, grad_check, h_sweep, small_config
from .model import (
    HeadOutputs,
    ModelConfig,
    SurgeEstimator,
    backward,
    dumps_estimator,
    forward,
    init_params,
    load_estimator,
    loads_estimator,
    loss,
    save_estimator,
)
from .train import (
    EstimatorDataset,
    TrainConfig,
    TrainReport,
    dataset_from_surges,
    r_squared,
    train,
)

__all__ = [
    "FEATURE_NAMES",
    "TARGET_NAMES",
    "EventFeatures",
    "EstimatorDataset",
    "GradCheckResult",
    "HeadOutputs",
    "ModelConfig",
    "SurgeEstimator",
    "TrainConfig",
    "TrainReport",
    "backward",
    "dataset_from_surges",
    "dumps_estimator",
    "featurize",
    "featurize_events",
    "forward",
    "grad_check",
    "h_sweep",
    "init_params",
    "load_estimator",
    "loads_estimator",
    "loss",
    "r_squared",
    "save_estimator",
    "small_config",
    "train",
]
