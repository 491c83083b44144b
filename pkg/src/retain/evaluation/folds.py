"""Seeded player-level fold plans shared by every model under comparison."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    assignment: pd.Series  # player_id -> fold index
    seed: int

    def folds_of(self, player_ids) -> np.ndarray:
        found = self.assignment.reindex(np.asarray(player_ids))
        if found.isna().any():
            missing = list(found.index[found.isna()][:3])
            raise KeyError(f"players not covered by the fold plan, e.g. {missing}")
        return found.to_numpy().astype(np.int64)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignment.to_numpy(), minlength=self.n_folds).tolist()


def make_folds(players, n_folds: int = 10, seed: int = 0) -> FoldPlan:
    """Uniform random partition (unstratified); fold sizes differ by at most one.

    Players are sorted first, so the plan depends only on the player set.
    """
    ids = np.sort(np.unique(np.asarray(players).astype(str)))
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    if len(ids) < n_folds:
        raise ValueError(f"{len(ids)} players cannot fill {n_folds} folds")
    perm = np.random.default_rng(seed).permutation(len(ids))
    fold = np.empty(len(ids), dtype=np.int64)
    fold[perm] = np.arange(len(ids)) % n_folds
    return FoldPlan(n_folds, pd.Series(fold, index=ids, name="fold"), seed)
