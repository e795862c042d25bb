"""Train a network that distills from its own earlier snapshots, plus baselines and tooling."""

__version__ = "0.1.0"

from .errors import ConfigError, ContractError, FormatError, NumericError, VersionError
from .losses import LossBreakdown, ce_loss, kl_asymmetric, kl_symmetric, sd_loss
from .models import Model, ModelSpec, build_model
from .optim import OptimizerState, sgd_step
from .schedule import Mode, ScheduleConfig, learning_rate, loss_weights, partition_even, teacher_index
from .snapshots import (
    Snapshot,
    Teacher,
    TrainState,
    fork_run,
    load_checkpoint,
    load_snapshot,
    register_teacher,
    save_checkpoint,
    save_snapshot,
)
from .evaluation import EvalReport, ensemble_predict, evaluate, topk_error
from .trainer import MetricsRecord, RunConfig, Trainer, TrainResult, train
from .experiment import run_experiment

__all__ = [
    "__version__",
    "build_model",
    "ce_loss",
    "ConfigError",
    "ContractError",
    "ensemble_predict",
    "EvalReport",
    "evaluate",
    "fork_run",
    "FormatError",
    "kl_asymmetric",
    "kl_symmetric",
    "learning_rate",
    "load_checkpoint",
    "load_snapshot",
    "loss_weights",
    "LossBreakdown",
    "MetricsRecord",
    "Mode",
    "Model",
    "ModelSpec",
    "NumericError",
    "OptimizerState",
    "partition_even",
    "register_teacher",
    "run_experiment",
    "RunConfig",
    "save_checkpoint",
    "save_snapshot",
    "ScheduleConfig",
    "sd_loss",
    "sgd_step",
    "Snapshot",
    "Teacher",
    "teacher_index",
    "topk_error",
    "train",
    "Trainer",
    "TrainResult",
    "TrainState",
    "VersionError",
]
