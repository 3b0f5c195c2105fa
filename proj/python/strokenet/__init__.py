"""Multimodal (3D CT + clinical metadata) outcome prediction, C++ core."""

from ._core import (
    CheckpointMismatchError,
    ConfigError,
    CorruptFileError,
    IoError,
    NumericalError,
    ParameterError,
    ShapeError,
    UndefinedMetricError,
    accuracy,
    auc,
    conv3d,
    default_run_config,
    dichotomize,
    f1_score,
    focal_loss,
    generate_synthetic_cohort,
    load_checkpoint,
    one_nearest_accuracy,
    parameter_count,
    predict_checkpoint,
    run_experiment,
    softmax,
)

__all__ = [name for name in dir() if not name.startswith("_")]
