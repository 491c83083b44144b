"""Cross-validation over a shared fold plan, with per-fold refitting of the encoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..featurize import SHORT_TERM, EvalWindow, FeatureWindow, build_frame, encode, label
from ..learners import ModelSpec, predict, train
from ..learners.models import combine
from ..telemetry import EventLog
from .folds import FoldPlan
from .metrics import MetricSet, compute_metrics

ENSEMBLE_MEMBERS = ("lr", "svm", "rf")


class FoldError(RuntimeError):
    def __init__(self, fold: int, model: str, cause: Exception) -> None:
        super().__init__(f"fold {fold}, model {model}: {type(cause).__name__}: {cause}")
        self.fold = fold
        self.model = model
        self.cause = cause


@dataclass
class CVResult:
    name: str
    pooled: MetricSet
    folds: list[MetricSet]
    predictions: pd.DataFrame  # player_id, fold, label, class, score


def labelled_frame(log: EventLog, window: FeatureWindow, eval_window: EvalWindow = SHORT_TERM) -> pd.DataFrame:
    """Feature rows with a ``target`` column for ``eval_window``."""
    frame = build_frame(log, window)
    frame["target"] = label(log, eval_window).loc[frame["player_id"]].to_numpy()
    return frame


def _ensemble_names(specs: dict[str, ModelSpec]) -> list[str] | None:
    by_family = {}
    for name, spec in specs.items():
        if spec.family in ENSEMBLE_MEMBERS:
            by_family.setdefault(spec.family, []).append(name)
    if all(len(by_family.get(f, [])) == 1 for f in ENSEMBLE_MEMBERS):
        return [by_family[f][0] for f in ENSEMBLE_MEMBERS]
    return None


def benchmark(
    frame: pd.DataFrame,
    specs: dict[str, ModelSpec],
    plan: FoldPlan,
    target: str = "retained_short",
    numeric: list[str] | None = None,
    ensemble: bool = True,
) -> dict[str, CVResult]:
    """Cross-validate several models on the same folds.

    When one lr, one svm and one rf spec are present and ``ensemble`` is set,
    an ``ensemble`` row is derived from their held-out member scores, which
    is exactly what a separately trained ensemble of those specs predicts.
    """
    fold = plan.folds_of(frame["player_id"])
    members = _ensemble_names(specs) if ensemble else None
    names = list(specs) + (["ensemble"] if members else [])
    parts: dict[str, list[pd.DataFrame]] = {n: [] for n in names}
    for k in range(plan.n_folds):
        test_mask = fold == k
        if not test_mask.any():
            continue
        train_rows = frame[~test_mask]
        test_rows = frame[test_mask]
        tr = encode(train_rows, train_rows, target=target, numeric=numeric)
        te = tr.encoder.transform(test_rows, target=target)
        scores = {}
        for name, spec in specs.items():
            try:
                model = train(spec, tr)
                classes, s = predict(model, te)
            except Exception as exc:  # attach the fold for the caller
                raise FoldError(k, name, exc) from exc
            scores[name] = s
            parts[name].append(_fold_frame(te.player_ids, k, te.y, classes, s))
        if members:
            classes, s = combine(np.stack([scores[m] for m in members], axis=1))
            parts["ensemble"].append(_fold_frame(te.player_ids, k, te.y, classes, s))
    return {n: _summarize(n, parts[n]) for n in names}


def _fold_frame(pids, k, y, classes, scores) -> pd.DataFrame:
    return pd.DataFrame({"player_id": pids, "fold": k, "label": y, "class": classes, "score": scores})


def _summarize(name: str, parts: list[pd.DataFrame]) -> CVResult:
    pred = pd.concat(parts, ignore_index=True)
    folds = [compute_metrics(p["label"], p["class"], p["score"]) for p in parts]
    pooled = compute_metrics(pred["label"], pred["class"], pred["score"])
    return CVResult(name, pooled, folds, pred)


def cross_validate(
    source: EventLog | pd.DataFrame,
    window: FeatureWindow | None,
    eval_window: EvalWindow | None,
    spec: ModelSpec,
    plan: FoldPlan,
    target: str | None = None,
    numeric: list[str] | None = None,
) -> CVResult:
    """Pooled and per-fold metrics for one model.

    ``source`` is an event log (features and labels are computed for
    ``window``/``eval_window``) or a ready feature frame with a label column
    ``target`` (default ``retained_short``).
    """
    if isinstance(source, EventLog):
        frame = labelled_frame(source, window, eval_window or SHORT_TERM)
        target = "target"
    else:
        frame = source
        target = target or "retained_short"
    return benchmark(frame, {spec.family: spec}, plan, target, numeric, ensemble=False)[spec.family]
