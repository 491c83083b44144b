"""Random forest of unpruned Gini trees with mean-decrease-in-impurity importance."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..featurize import Dataset, Encoder
from .cart import EPS, _better, _scan_feature, apply_tree


@njit(cache=True, nogil=True)
def _grow_random(x, y, rows, m_try, min_leaf, seed):
    """Depth-first growth with ``m_try`` random candidate columns per node.

    Columns are drawn without replacement in a random order; constant
    columns do not count against ``m_try`` (the usual CART convention).
    Returns flat node arrays plus per-column impurity decrease (count units).
    """
    np.random.seed(seed)
    n, p = rows.shape[0], x.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int64)
    gain = np.zeros(p)
    work = rows.copy()
    buf = np.empty(n, dtype=np.int64)
    perm = np.arange(p)
    stack = np.empty((cap, 3), dtype=np.int64)
    top = 0
    stack[0, 0], stack[0, 1], stack[0, 2] = 0, 0, n
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node, lo, hi = stack[top, 0], stack[top, 1], stack[top, 2]
        idx = work[lo:hi]
        m = hi - lo
        n_pos = 0
        for k in range(m):
            n_pos += y[idx[k]]
        count[node] = m
        value[node] = n_pos / m
        if n_pos == 0 or n_pos == m or m < 2 * min_leaf:
            continue
        for k in range(p - 1, 0, -1):
            r = np.random.randint(0, k + 1)
            perm[k], perm[r] = perm[r], perm[k]
        best_f, best_thr, best_score = -1, 0.0, -1.0
        tried = 0
        for k in range(p):
            if tried >= m_try:
                break
            f = perm[k]
            score, thr, ok, constant = _scan_feature(x, y, idx, f, min_leaf, n_pos)
            if constant:
                continue
            tried += 1
            if ok and _better(score, f, thr, best_score, best_f, best_thr):
                best_score, best_f, best_thr = score, f, thr
        parent = (n_pos * n_pos + (m - n_pos) * (m - n_pos)) / m
        if best_f < 0 or best_score - parent <= EPS:
            continue
        gain[best_f] += best_score - parent
        nl = 0
        nr = 0
        for k in range(m):
            r = idx[k]
            if x[r, best_f] <= best_thr:
                work[lo + nl] = r
                nl += 1
            else:
                buf[nr] = r
                nr += 1
        for k in range(nr):
            work[lo + nl + k] = buf[k]
        feature[node], threshold[node] = best_f, best_thr
        left[node], right[node] = n_nodes, n_nodes + 1
        n_nodes += 2
        # push right first so the left subtree is expanded first
        stack[top, 0], stack[top, 1], stack[top, 2] = right[node], lo + nl, hi
        top += 1
        stack[top, 0], stack[top, 1], stack[top, 2] = left[node], lo, lo + nl
        top += 1
    return (
        feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
        right[:n_nodes], value[:n_nodes], count[:n_nodes], gain,
    )


@njit(cache=True, nogil=True)
def _forest_scores(x, feature, threshold, left, right, value, roots):
    out = np.zeros(x.shape[0])
    for t in range(roots.shape[0]):
        leaves = apply_tree(x, feature, threshold, left, right, roots[t])
        for i in range(x.shape[0]):
            out[i] += value[leaves[i]]
    return out / roots.shape[0]


@njit(cache=True, nogil=True)
def _forest_votes(x, feature, threshold, left, right, value, roots):
    out = np.zeros(x.shape[0])
    for t in range(roots.shape[0]):
        leaves = apply_tree(x, feature, threshold, left, right, roots[t])
        for i in range(x.shape[0]):
            if value[leaves[i]] >= 0.5:
                out[i] += 1.0
    return out / roots.shape[0]


@dataclass
class Forest:
    """Trees stored back to back; ``roots[t]`` is the first node of tree t.

    The score is the mean over trees of the leaf retained fraction.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    importance: np.ndarray
    columns: list[str]
    n_trees: int
    m_try: int
    seed: int
    bootstrap: bool = True
    encoder: Encoder | None = None
    family: str = field(default="rf", init=False)

    def score(self, data: Dataset) -> np.ndarray:
        x = np.ascontiguousarray(data.X_raw, dtype=np.float64)
        return _forest_scores(x, self.feature, self.threshold, self.left, self.right, self.value, self.roots)

    def vote_fraction(self, data: Dataset) -> np.ndarray:
        """Fraction of trees classifying each row as retained."""
        x = np.ascontiguousarray(data.X_raw, dtype=np.float64)
        return _forest_votes(x, self.feature, self.threshold, self.left, self.right, self.value, self.roots)

    def ranked_importance(self) -> list[tuple[str, float]]:
        order = np.argsort(-self.importance, kind="stable")
        return [(self.columns[j], float(self.importance[j])) for j in order]

    def params(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "roots": self.roots.tolist(),
            "importance": self.importance.tolist(),
            "n_trees": self.n_trees,
            "m_try": self.m_try,
            "seed": self.seed,
            "bootstrap": self.bootstrap,
        }

    @classmethod
    def from_params(cls, p: dict, columns, encoder=None) -> Forest:
        return cls(
            feature=np.asarray(p["feature"], dtype=np.int64),
            threshold=np.asarray(p["threshold"], dtype=np.float64),
            left=np.asarray(p["left"], dtype=np.int64),
            right=np.asarray(p["right"], dtype=np.int64),
            value=np.asarray(p["value"], dtype=np.float64),
            roots=np.asarray(p["roots"], dtype=np.int64),
            importance=np.asarray(p["importance"], dtype=np.float64),
            columns=list(columns),
            n_trees=int(p["n_trees"]),
            m_try=int(p["m_try"]),
            seed=int(p["seed"]),
            bootstrap=bool(p["bootstrap"]),
            encoder=encoder,
        )


def tree_seeds(seed: int, n_trees: int) -> list[int]:
    """Per-tree seeds derived from the master seed alone."""
    children = np.random.SeedSequence(seed).spawn(n_trees)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def default_m_try(p: int) -> int:
    return max(1, int(np.floor(np.sqrt(p))))


def train_forest(
    data: Dataset,
    n_trees: int = 128,
    m_try: int | None = None,
    seed: int = 0,
    bootstrap: bool = True,
    min_leaf: int = 1,
    n_jobs: int = 1,
) -> Forest:
    """Bagged CART trees on the raw column layout.

    Importance of a column is the summed Gini decrease of its splits divided
    by the tree's sample size, averaged over trees. Trees may grow on
    ``n_jobs`` threads; each tree's randomness comes from its own seed, so
    the result does not depend on ``n_jobs``.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    x = np.ascontiguousarray(data.X_raw, dtype=np.float64)
    y = np.ascontiguousarray(data.y, dtype=np.int64)
    n, p = x.shape
    m_try = default_m_try(p) if m_try is None else int(m_try)
    if not 1 <= m_try <= p:
        raise ValueError(f"m_try must lie in [1, {p}], got {m_try}")
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")

    def grow(ts: int):
        if bootstrap:
            rows = np.random.default_rng(ts).integers(0, n, size=n).astype(np.int64)
        else:
            rows = np.arange(n, dtype=np.int64)
        return _grow_random(x, y, rows, m_try, min_leaf, ts)

    seeds = tree_seeds(seed, n_trees)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            grown = list(pool.map(grow, seeds))
    else:
        grown = [grow(ts) for ts in seeds]
    parts = [tuple(g[:-1]) for g in grown]
    importance = np.zeros(p)
    for g in grown:
        importance += g[-1] / n
    return _assemble(parts, importance / n_trees, data, n_trees, m_try, seed, bootstrap)


def _assemble(parts, importance, data, n_trees, m_try, seed, bootstrap) -> Forest:
    offsets = np.cumsum([0] + [len(a[0]) for a in parts])[:-1]
    feature = np.concatenate([a[0] for a in parts])
    threshold = np.concatenate([a[1] for a in parts])
    left = np.concatenate([np.where(a[2] >= 0, a[2] + o, -1) for a, o in zip(parts, offsets)])
    right = np.concatenate([np.where(a[3] >= 0, a[3] + o, -1) for a, o in zip(parts, offsets)])
    value = np.concatenate([a[4] for a in parts])
    return Forest(
        feature=feature.astype(np.int64),
        threshold=threshold.astype(np.float64),
        left=left.astype(np.int64),
        right=right.astype(np.int64),
        value=value.astype(np.float64),
        roots=offsets.astype(np.int64),
        importance=importance,
        columns=list(data.columns),
        n_trees=n_trees,
        m_try=m_try,
        seed=seed,
        bootstrap=bootstrap,
        encoder=data.encoder,
    )

