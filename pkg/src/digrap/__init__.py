"""Robust fine-tuning with directional gradient projection.

The functional core lives in ``paramspace``, ``models``, ``optim``,
``projection``, ``baselines``, ``shiftlab`` and ``metrics``; ``estimators``
wraps it in the scikit-learn API and ``harness`` runs experiment grids.
"""
from .baselines import MethodSpec, wise_interpolate
from .estimators import MahalanobisShiftScorer, RobustFineTuner
from .exceptions import ConfigError, DigrapError, NumericError, ShapeError, StateError
from .metrics import accuracy, delta_stats, maha_fit, maha_score, maha_scores
from .models import Batch, ModelSpec, backward, forward_loss, grad_check, loss_and_grad, predict
from .optim import AdamState, OptimConfig, Schedule, adam_step, schedule_lr
from .paramspace import ParamGroup, ParamSpace, ReferenceMode, capture_snapshot, init_params
from .projection import DigrapConfig, DigrapOptimizer, digrap_step, project_gradient
from .shiftlab import ShiftSpec, SuiteConfig, TaskSpec, make_suite
from .training import TrainConfig, fit, pretrain

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Batch", "ConfigError", "DigrapConfig", "DigrapError", "DigrapOptimizer",
    "MahalanobisShiftScorer", "MethodSpec", "ModelSpec", "NumericError", "OptimConfig",
    "ParamGroup", "ParamSpace", "ReferenceMode", "RobustFineTuner", "Schedule", "ShapeError",
    "ShiftSpec", "StateError", "SuiteConfig", "TaskSpec", "TrainConfig", "accuracy",
    "adam_step", "backward", "capture_snapshot", "delta_stats", "digrap_step", "fit",
    "forward_loss", "grad_check", "init_params", "loss_and_grad", "maha_fit", "maha_score",
    "maha_scores", "make_suite", "predict", "pretrain", "project_gradient", "schedule_lr",
    "wise_interpolate",
]
