"""Chunk-trained rule trees evaluated on a hold-out chunk and on its
nearest-neighbour perturbations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..featurize import Dataset
from ..learners import predict, train_rule_tree


class NeighborError(ValueError):
    pass


@dataclass
class RobustnessReport:
    rates: np.ndarray  # levels x trees
    seed: int
    n_chunks: int
    holdout_size: int

    @property
    def levels(self) -> list[str]:
        return ["holdout"] + [f"{i}-NN" for i in range(1, self.rates.shape[0])]

    def summary(self) -> pd.DataFrame:
        """Rows min/max/mean/std, one column per level."""
        r = self.rates
        return pd.DataFrame(
            [r.min(axis=1), r.max(axis=1), r.mean(axis=1), r.std(axis=1)],
            index=["min", "max", "mean", "std"],
            columns=self.levels,
        )


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, accumulated one column at a time."""
    out = np.zeros((A.shape[0], B.shape[0]))
    for c in range(A.shape[1]):
        diff = A[:, c][:, None] - B[:, c][None, :]
        out += diff * diff
    return out


def neighbor_table(
    data: Dataset,
    query: np.ndarray,
    pool: np.ndarray,
    max_level: int,
    block: int = 256,
) -> np.ndarray:
    """For each query row, the pool rows (same label) ranked 1..max_level.

    Ranking is by distance in the standardized space, ties by player_id.
    Returns an array of row indices with shape (len(query), max_level).
    """
    pid_rank = pd.Series(data.player_ids.astype(str)).rank(method="first").to_numpy()
    out = np.empty((len(query), max_level), dtype=np.int64)
    for cls in (0, 1):
        q = query[data.y[query] == cls]
        cand = pool[data.y[pool] == cls]
        if len(q) == 0:
            continue
        if len(cand) < max_level:
            label = "retained" if cls == 1 else "churned"
            raise NeighborError(
                f"class {cls} ({label}) has {len(cand)} candidates outside the hold-out, need {max_level}"
            )
        pos = {r: k for k, r in enumerate(query)}
        for start in range(0, len(q), block):
            rows = q[start:start + block]
            d = squared_distances(data.X[rows], data.X[cand])
            for k, r in enumerate(rows):
                order = np.lexsort((pid_rank[cand], d[k]))[:max_level]
                out[pos[r]] = cand[order]
    return out


def robustness_study(
    data: Dataset,
    tree_params: dict | None = None,
    n_chunks: int = 10,
    max_level: int = 9,
    seed: int = 0,
    rotate: bool = False,
) -> RobustnessReport:
    """Train one rule tree per non-hold-out chunk; score each on the hold-out
    and on hold-outs replaced by their i-th nearest same-class neighbours.

    With ``rotate`` every chunk takes a turn as hold-out and the rates of all
    rotations are pooled per level.
    """
    if n_chunks < 3:
        raise ValueError("n_chunks must be >= 3")
    params = {"max_rules": 4, "min_leaf": 1, **(tree_params or {})}
    # shuffle in player_id order so chunks depend only on the player set
    canonical = np.argsort(data.player_ids.astype(str), kind="stable")
    perm = canonical[np.random.default_rng(seed).permutation(len(data))]
    chunks = np.array_split(perm, n_chunks)
    holdouts = range(n_chunks) if rotate else [0]
    columns = []
    for h in holdouts:
        hold = np.sort(chunks[h])
        rest = np.sort(np.concatenate([c for k, c in enumerate(chunks) if k != h]))
        trees = [
            train_rule_tree(data.subset(np.sort(c)), params["max_rules"], params["min_leaf"])
            for k, c in enumerate(chunks)
            if k != h
        ]
        nbr = neighbor_table(data, hold, rest, max_level)
        level_rows = [hold] + [nbr[:, i] for i in range(max_level)]
        rates = np.empty((max_level + 1, len(trees)))
        for lvl, rows in enumerate(level_rows):
            view = data.subset(rows)
            y = data.y[hold]  # neighbours share the label by construction
            for t, tree in enumerate(trees):
                classes, _ = predict(tree, view)
                rates[lvl, t] = float(np.mean(classes != y))
        columns.append(rates)
    return RobustnessReport(np.hstack(columns), seed, n_chunks, len(chunks[0]))
