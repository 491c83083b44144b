"""Grid search by k-fold cross-validated accuracy on a random subsample."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..featurize import Dataset
from .logistic import train_logistic
from .models import ModelSpec, predict, train

DEFAULT_GRIDS = {
    "svm": {
        "kernel": ["linear", "rbf"],
        "C": [0.1, 1.0, 10.0, 100.0],
        "gamma": [0.001, 0.01, 0.1, 1.0],
    },
    "rf": {
        "m_try": ["sqrt", "third", "half"],
        "n_trees": [128, 256, 512],
    },
}


def resolve_m_try(value, p: int) -> int:
    if isinstance(value, str):
        frac = {"sqrt": int(np.floor(np.sqrt(p))), "third": p // 3, "half": p // 2}
        if value not in frac:
            raise ValueError(f"unknown m_try rule {value!r}")
        return max(1, frac[value])
    return int(value)


def grid_points(grid: dict) -> list[dict]:
    """Cartesian product in lexicographic order: keys sorted, values as given."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must be non-empty")
    keys = sorted(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


@dataclass
class TuneResult:
    best: dict
    table: list[tuple[dict, float]]
    n_rows: int
    seed: int


def tune(
    data: Dataset,
    family: str,
    grid: dict | None = None,
    subsample: int = 10_000,
    seed: int = 0,
    n_folds: int = 10,
    fixed: dict | None = None,
) -> TuneResult:
    """Evaluate every grid point by ``n_folds``-fold CV accuracy on a uniform
    subsample of ``min(subsample, n)`` rows; the first best point wins.

    The subsample shares the encoding it was given. SVMs are scored by the
    sign of the decision function (calibration does not move the boundary
    enough to matter for accuracy and triples the cost).
    """
    if family == "forest":
        family = "rf"
    if family not in ("svm", "rf"):
        raise ValueError("tuning supports the svm and rf families")
    points = grid_points(grid or DEFAULT_GRIDS[family])
    rng = np.random.default_rng(seed)
    n = len(data)
    take = np.sort(rng.choice(n, size=min(subsample, n), replace=False))
    sub = data.subset(take)
    folds = rng.permutation(len(sub)) % n_folds
    p = sub.X.shape[1]
    table: list[tuple[dict, float]] = []
    seen: dict[tuple, float] = {}
    for point in points:
        params = {**(fixed or {}), **point, "seed": seed}
        if family == "svm":
            params["calibrate"] = False
            if params.get("kernel") == "linear":
                params.pop("gamma", None)
        else:
            params["m_try"] = resolve_m_try(params.get("m_try", "sqrt"), p)
        key = tuple(sorted((k, str(v)) for k, v in params.items()))
        if key not in seen:
            seen[key] = _cv_accuracy(ModelSpec(family, params), sub, folds, n_folds)
        table.append((point, seen[key]))
    best_acc = max(acc for _, acc in table)
    best = next(pt for pt, acc in table if acc == best_acc)
    return TuneResult(best=dict(best), table=table, n_rows=len(sub), seed=seed)


def _cv_accuracy(spec: ModelSpec, data: Dataset, folds: np.ndarray, n_folds: int) -> float:
    correct = 0
    for k in range(n_folds):
        test = folds == k
        if not test.any():
            continue
        model = train(spec, data.subset(np.flatnonzero(~test)))
        classes, _ = predict(model, data.subset(np.flatnonzero(test)))
        correct += int((classes == data.y[test]).sum())
    return correct / len(data)


def select_lr_terms(data: Dataset, subsample: int = 10_000, seed: int = 0, max_steps: int = 100) -> list[tuple[str, ...]]:
    """Run the stepwise search once on a uniform subsample and return its terms.

    Cross-validation then refits these fixed terms per fold, which keeps the
    search cost out of the fold loop.
    """
    rng = np.random.default_rng(seed)
    take = np.sort(rng.choice(len(data), size=min(subsample, len(data)), replace=False))
    return train_logistic(data.subset(take), max_steps=max_steps).terms
