from ctaser.trainer.checkpoint import CheckpointError, load_checkpoint, restore_model, save_checkpoint
from ctaser.trainer.cv import (
    EvalError,
    Fold,
    PlanError,
    build_fold_plan,
    cross_eval,
    evaluate,
    list_checkpoints,
    run_cv,
    train_fold,
    train_single,
)
from ctaser.trainer.data import Batch, Corpus, DataError, load_corpus, make_batches
from ctaser.trainer.metrics import MetricError, confusion_matrix, uar
from ctaser.trainer.optim import Adam, PlateauScheduler, TrainingError

__all__ = [
    "Adam",
    "Batch",
    "CheckpointError",
    "Corpus",
    "DataError",
    "EvalError",
    "Fold",
    "MetricError",
    "PlanError",
    "PlateauScheduler",
    "TrainingError",
    "build_fold_plan",
    "confusion_matrix",
    "cross_eval",
    "evaluate",
    "list_checkpoints",
    "load_checkpoint",
    "load_corpus",
    "make_batches",
    "restore_model",
    "run_cv",
    "save_checkpoint",
    "train_fold",
    "train_single",
    "uar",
]
