"""Weakly-supervised sound event detection toolkit."""

from wsed._core import (
    DataError,
    FeatureConfig,
    Model,
    ModelConfig,
    NumericError,
    ShapeError,
    UsageError,
    baseline_model,
    crnn_model,
    extract_mbe,
    f_from_pr,
    hamming_window,
    load_checkpoint,
    mel_filterbank,
    replicate_weak_to_strong,
    run_grad_checks,
    segment_activity,
    segment_er,
    segment_f,
    training_metric,
    weak_from_strong,
    weak_prf,
)

__all__ = [
    "DataError",
    "FeatureConfig",
    "Model",
    "ModelConfig",
    "NumericError",
    "ShapeError",
    "UsageError",
    "baseline_model",
    "crnn_model",
    "extract_mbe",
    "f_from_pr",
    "hamming_window",
    "load_checkpoint",
    "mel_filterbank",
    "replicate_weak_to_strong",
    "run_grad_checks",
    "segment_activity",
    "segment_er",
    "segment_f",
    "training_metric",
    "weak_from_strong",
    "weak_prf",
]
