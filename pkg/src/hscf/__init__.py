"""Hierarchical structural-functional connectivity fusion.

Disentangles shared and modality-specific latent node representations
from paired structural/functional brain connectivity, fuses them into a
single generated connectivity matrix, and classifies disease stage from
it. Ships a synthetic cohort generator, a trainer, evaluation metrics,
and a connectivity-difference analysis, all exposed through the `hscf`
command-line tool.
"""

from .analysis import (
    EvalResult,
    Metrics,
    build_analysis,
    confusion_metrics,
    evaluate_task,
    percent_string,
    stage_difference,
    threshold_quantile,
    top_k_connections,
)
from .data import (
    Cohort,
    ConnectivityMatrix,
    NodeFeatureMatrix,
    RoiAtlas,
    Subject,
    Task,
    load_cohort,
    save_cohort,
    split_cohort,
)
from .errors import HscfError, ShapeError, ValidationError
from .gradcheck import run_full_check
from .losses import LossBreakdown, LossWeights, total_loss
from .model import Model, ModelConfig, load_checkpoint, prepare_subject, save_checkpoint
from .synthetic import generate_synthetic_cohort
from .train import AdamState, FitResult, TrainConfig, adam_step, fit

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Cohort",
    "ConnectivityMatrix",
    "EvalResult",
    "FitResult",
    "HscfError",
    "LossBreakdown",
    "LossWeights",
    "Metrics",
    "Model",
    "ModelConfig",
    "NodeFeatureMatrix",
    "RoiAtlas",
    "ShapeError",
    "Subject",
    "Task",
    "TrainConfig",
    "ValidationError",
    "adam_step",
    "build_analysis",
    "confusion_metrics",
    "evaluate_task",
    "fit",
    "generate_synthetic_cohort",
    "load_checkpoint",
    "load_cohort",
    "percent_string",
    "prepare_subject",
    "run_full_check",
    "save_checkpoint",
    "save_cohort",
    "split_cohort",
    "stage_difference",
    "threshold_quantile",
    "top_k_connections",
    "total_loss",
    "__version__",
]
