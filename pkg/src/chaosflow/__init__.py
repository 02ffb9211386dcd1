"""Learn flow maps of chaotic systems with memory-based residual networks
and judge long rollouts by their chaos statistics."""
from .chaostats import (
    ChaosReport,
    EmbeddingSpec,
    MetricsConfig,
    approximate_entropy,
    autocorrelation,
    chaos_report,
    compare_reports,
    correlation_dimension,
    delay_embed,
    lyapunov_exponent,
    report_pair,
)
from .dataset import DatasetSpec, ObservationSpec, SequenceDataset, project_observed, sample_sequences
from .dynamics import Lorenz63Params, Lorenz96Params, SystemSpec, integrate
from .flownet import FlowMapModel, TrainConfig, init_model, load_checkpoint, save_checkpoint, train
from .rollout import PredictionRun, pointwise_log_abs_error, predict
from .trajectory import Trajectory, load_trajectory, save_trajectory

__version__ = "0.1.0"

__all__ = [
    "ChaosReport",
    "DatasetSpec",
    "EmbeddingSpec",
    "FlowMapModel",
    "Lorenz63Params",
    "Lorenz96Params",
    "MetricsConfig",
    "ObservationSpec",
    "PredictionRun",
    "SequenceDataset",
    "SystemSpec",
    "TrainConfig",
    "Trajectory",
    "approximate_entropy",
    "autocorrelation",
    "chaos_report",
    "compare_reports",
    "correlation_dimension",
    "delay_embed",
    "init_model",
    "integrate",
    "load_checkpoint",
    "load_trajectory",
    "lyapunov_exponent",
    "pointwise_log_abs_error",
    "predict",
    "project_observed",
    "report_pair",
    "sample_sequences",
    "save_checkpoint",
    "save_trajectory",
    "train",
]
