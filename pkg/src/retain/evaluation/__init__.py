"""Metrics, cross-validation, robustness and long-term analyses, reporting."""

from .cv import CVResult, FoldError, benchmark, cross_validate, labelled_frame
from .folds import FoldPlan, make_folds
from .longterm import LongTermReport, SpanError, longterm_analysis
from .metrics import MetricSet, auc_score, compute_metrics, metrics_from_counts, roc_points, trapezoid_auc
from .report import FeatureReport, correlations, feature_report
from .robustness import NeighborError, RobustnessReport, neighbor_table, robustness_study

__all__ = [
    "CVResult",
    "FeatureReport",
    "FoldError",
    "FoldPlan",
    "LongTermReport",
    "MetricSet",
    "NeighborError",
    "RobustnessReport",
    "SpanError",
    "auc_score",
    "benchmark",
    "compute_metrics",
    "correlations",
    "cross_validate",
    "feature_report",
    "labelled_frame",
    "longterm_analysis",
    "make_folds",
    "metrics_from_counts",
    "neighbor_table",
    "robustness_study",
    "roc_points",
    "trapezoid_auc",
]
