"""Streaming multivariate time-series anomaly detection.

An adversarial autoencoder whose latent code is reshaped by a masked
autoregressive flow, trained on normal data only, with an L1 sparsity
penalty on the encoder. Windows are scored by standardized
reconstruction error against statistics calibrated on normal data.
"""

from .data import NormStats, Record, Window, WindowingConfig, sliding_windows, window_count
from .detection import CalibrationStats, DetectorConfig, StreamDetector, Verdict, calibrate
from .errors import DatasetError, FlowadError, InputError, NonFiniteError, StreamError
from .evaluation import auroc, evaluate, iqr_mean, roc_curve, trapezoid_auc
from .fastpath import ScoringRuntime
from .model import ModelConfig, init_discriminator, init_generator
from .synth import SynthConfig, synth_generate
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "CalibrationStats",
    "DatasetError",
    "DetectorConfig",
    "FlowadError",
    "InputError",
    "ModelConfig",
    "NonFiniteError",
    "NormStats",
    "Record",
    "ScoringRuntime",
    "StreamDetector",
    "StreamError",
    "SynthConfig",
    "TrainConfig",
    "TrainResult",
    "Verdict",
    "Window",
    "WindowingConfig",
    "auroc",
    "calibrate",
    "evaluate",
    "init_discriminator",
    "init_generator",
    "iqr_mean",
    "roc_curve",
    "sliding_windows",
    "synth_generate",
    "train",
    "trapezoid_auc",
    "window_count",
]
