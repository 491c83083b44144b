"""Confusion-count metrics, rank-based AUC and ROC points (retained = positive)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int, auc: float | None = None) -> MetricSet:
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return MetricSet(
        accuracy=_ratio(tp + tn, tp + fp + tn + fn),
        precision=precision,
        recall=recall,
        f1=f1,
        auc=auc,
        tp=int(tp),
        fp=int(fp),
        tn=int(tn),
        fn=int(fn),
    )


def auc_score(labels, scores) -> float | None:
    """P(score+ > score-) + P(tie)/2 via average ranks; None for one class."""
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=float)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = pd.Series(s).rank(method="average").to_numpy()
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(labels, scores) -> pd.DataFrame:
    """(fpr, tpr, threshold) at every distinct score, from (0, 0) to (1, 1)."""
    y = np.asarray(labels).astype(int)
    s = np.asarray(scores, dtype=float)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1] if len(s) else np.array([], dtype=int)
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    n_pos, n_neg = y.sum(), len(y) - y.sum()
    fpr = np.r_[0.0, fps / n_neg if n_neg else np.zeros(len(fps))]
    tpr = np.r_[0.0, tps / n_pos if n_pos else np.zeros(len(tps))]
    thr = np.r_[np.inf, s[last]]
    return pd.DataFrame({"fpr": fpr, "tpr": tpr, "threshold": thr})


def trapezoid_auc(roc: pd.DataFrame) -> float:
    x, y = roc["fpr"].to_numpy(), roc["tpr"].to_numpy()
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def compute_metrics(labels, classes, scores=None) -> MetricSet:
    y = np.asarray(labels).astype(int)
    c = np.asarray(classes).astype(int)
    if y.shape != c.shape:
        raise ValueError("labels and classes differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    tp = int(((c == 1) & (y == 1)).sum())
    fp = int(((c == 1) & (y == 0)).sum())
    tn = int(((c == 0) & (y == 0)).sum())
    fn = int(((c == 0) & (y == 1)).sum())
    auc = None if scores is None else auc_score(y, scores)
    return metrics_from_counts(tp, fp, tn, fn, auc)
