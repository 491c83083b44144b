"""Rule trees, logistic regression, SVM, random forest and their ensemble."""

from .cart import RuleSet, RuleTree, best_split, export_rules, train_rule_tree
from .forest import Forest, train_forest
from .logistic import LinearModel, SeparationWarning, train_logistic
from .models import (
    ColumnMismatchError,
    Ensemble,
    MajorityModel,
    ModelSpec,
    TrainedModel,
    default_specs,
    dumps,
    envelope,
    from_envelope,
    predict,
    train,
)
from .svm import ConvergenceError, KernelMachine, train_svm
from .tuning import DEFAULT_GRIDS, TuneResult, select_lr_terms, tune

__all__ = [
    "ColumnMismatchError",
    "ConvergenceError",
    "DEFAULT_GRIDS",
    "Ensemble",
    "Forest",
    "KernelMachine",
    "LinearModel",
    "MajorityModel",
    "ModelSpec",
    "RuleSet",
    "RuleTree",
    "SeparationWarning",
    "TrainedModel",
    "TuneResult",
    "best_split",
    "default_specs",
    "dumps",
    "envelope",
    "export_rules",
    "from_envelope",
    "predict",
    "select_lr_terms",
    "train",
    "train_forest",
    "train_logistic",
    "train_rule_tree",
    "train_svm",
    "tune",
]
