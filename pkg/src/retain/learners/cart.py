"""Gini CART: shared split search, the small rule tree and its rule export.

Split candidates on a column are midpoints between consecutive distinct
sorted values; a row goes left when ``x <= threshold``. Candidates are
compared by the Gini proxy ``sum(c_left**2)/n_left + sum(c_right**2)/n_right``
(larger is better). Near-equal candidates (within ``EPS``) resolve to the
lowest column index, then the lowest threshold.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..featurize import Dataset, Encoder

EPS = 1e-9
NO_SPLIT = -1


@njit(cache=True, nogil=True)
def _better(score, f, thr, best_score, best_f, best_thr):
    if score > best_score + EPS:
        return True
    if score >= best_score - EPS:
        if best_f < 0 or f < best_f or (f == best_f and thr < best_thr):
            return True
    return False


@njit(cache=True, nogil=True)
def _scan_feature(x, y, idx, f, min_leaf, n_pos):
    """Best threshold on column ``f`` for rows ``idx``.

    Returns (score, threshold, valid, constant).
    """
    n = idx.shape[0]
    vals = np.empty(n)
    for k in range(n):
        vals[k] = x[idx[k], f]
    order = np.argsort(vals, kind="mergesort")
    if vals[order[0]] == vals[order[n - 1]]:
        return -1.0, 0.0, False, True
    best = -1.0
    best_thr = 0.0
    found = False
    left_pos = 0
    n_neg = n - n_pos
    for k in range(n - 1):
        left_pos += y[idx[order[k]]]
        a = vals[order[k]]
        b = vals[order[k + 1]]
        if a == b:
            continue
        nl = k + 1
        nr = n - nl
        if nl < min_leaf or nr < min_leaf:
            continue
        lp = left_pos
        ln = nl - lp
        rp = n_pos - lp
        rn = n_neg - ln
        score = (lp * lp + ln * ln) / nl + (rp * rp + rn * rn) / nr
        if score > best + EPS:
            thr = 0.5 * (a + b)
            if thr >= b:
                thr = a
            best = score
            best_thr = thr
            found = True
    return best, best_thr, found, False


@njit(cache=True, nogil=True)
def _best_split(x, y, idx, features, min_leaf):
    """Best (feature, threshold, gain) over ``features``; gain in count units."""
    n = idx.shape[0]
    n_pos = 0
    for k in range(n):
        n_pos += y[idx[k]]
    parent = (n_pos * n_pos + (n - n_pos) * (n - n_pos)) / n
    best_f = -1
    best_thr = 0.0
    best_score = -1.0
    for f in features:
        score, thr, ok, _ = _scan_feature(x, y, idx, f, min_leaf, n_pos)
        if ok and _better(score, f, thr, best_score, best_f, best_thr):
            best_score, best_f, best_thr = score, f, thr
    if best_f < 0:
        return -1, 0.0, 0.0
    return best_f, best_thr, best_score - parent


@njit(cache=True, nogil=True)
def apply_tree(x, feature, threshold, left, right, root):
    """Leaf index reached by every row of ``x``."""
    out = np.empty(x.shape[0], dtype=np.int64)
    for i in range(x.shape[0]):
        node = root
        while feature[node] >= 0:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


def best_split(x: np.ndarray, y: np.ndarray, idx=None, min_leaf: int = 1, features=None):
    """Python-facing split search: returns ``(feature, threshold, gain)``;
    feature is -1 when no split is possible."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    idx = np.arange(len(x), dtype=np.int64) if idx is None else np.asarray(idx, dtype=np.int64)
    features = np.arange(x.shape[1], dtype=np.int64) if features is None else np.asarray(features, dtype=np.int64)
    f, thr, gain = _best_split(x, y, idx, features, int(min_leaf))
    return int(f), float(thr), float(gain)


@dataclass
class RuleTree:
    """Depth-limited classification tree over raw (unscaled) columns.

    Node arrays follow the usual layout: ``feature[k] == -1`` marks a leaf,
    ``value`` holds the training fraction retained, ``count`` the training
    rows reaching the node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    columns: list[str]
    column_info: list[tuple[str, str | None]]
    encoder: Encoder | None = None
    max_rules: int | None = 4
    min_leaf: int = 1
    family: str = field(default="tree", init=False)

    @property
    def n_rules(self) -> int:
        return int((self.feature >= 0).sum())

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def leaves(self, X_raw: np.ndarray) -> np.ndarray:
        return apply_tree(
            np.ascontiguousarray(X_raw, dtype=np.float64),
            self.feature, self.threshold, self.left, self.right, 0,
        )

    def score(self, data: Dataset) -> np.ndarray:
        return self.value[self.leaves(data.X_raw)]

    def params(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "count": self.count.tolist(),
            "max_rules": self.max_rules,
            "min_leaf": self.min_leaf,
        }

    @classmethod
    def from_params(cls, p: dict, columns, column_info, encoder=None) -> RuleTree:
        return cls(
            feature=np.asarray(p["feature"], dtype=np.int64),
            threshold=np.asarray(p["threshold"], dtype=np.float64),
            left=np.asarray(p["left"], dtype=np.int64),
            right=np.asarray(p["right"], dtype=np.int64),
            value=np.asarray(p["value"], dtype=np.float64),
            count=np.asarray(p["count"], dtype=np.int64),
            columns=list(columns),
            column_info=[tuple(c) for c in column_info],
            encoder=encoder,
            max_rules=p.get("max_rules"),
            min_leaf=p.get("min_leaf", 1),
        )


def grow_best_first(
    x: np.ndarray,
    y: np.ndarray,
    max_rules: int | None,
    min_leaf: int = 1,
) -> tuple[np.ndarray, ...]:
    """Grow by repeatedly splitting the frontier leaf with the largest gain.

    Returns node arrays (feature, threshold, left, right, value, count).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    features = np.arange(x.shape[1], dtype=np.int64)
    feature, threshold, left, right, value, count = [], [], [], [], [], []
    members: list[np.ndarray] = []

    def new_node(idx: np.ndarray) -> int:
        feature.append(NO_SPLIT)
        threshold.append(0.0)
        left.append(NO_SPLIT)
        right.append(NO_SPLIT)
        value.append(float(y[idx].mean()))
        count.append(len(idx))
        members.append(idx)
        return len(feature) - 1

    heap: list[tuple[float, int, int, float]] = []

    def push(node: int) -> None:
        idx = members[node]
        if len(idx) < 2 * min_leaf or value[node] in (0.0, 1.0):
            return
        f, thr, gain = _best_split(x, y, idx, features, min_leaf)
        if f >= 0 and gain > EPS:
            heapq.heappush(heap, (-gain, node, f, thr))

    push(new_node(np.arange(len(x), dtype=np.int64)))
    n_internal = 0
    while heap and (max_rules is None or n_internal < max_rules):
        _, node, f, thr = heapq.heappop(heap)
        idx = members[node]
        mask = x[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        left[node] = new_node(idx[mask])
        right[node] = new_node(idx[~mask])
        members[node] = idx[:0]
        n_internal += 1
        push(left[node])
        push(right[node])
    return (
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
        np.asarray(count, dtype=np.int64),
    )


def train_rule_tree(data: Dataset, max_rules: int | None = 4, min_leaf: int = 1) -> RuleTree:
    """Best-first Gini tree with at most ``max_rules`` internal nodes.

    ``max_rules=None`` grows until no split reduces impurity (plain CART).
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if max_rules is not None and max_rules < 1:
        raise ValueError("max_rules must be >= 1")
    arrays = grow_best_first(data.X_raw, data.y, max_rules, min_leaf)
    return RuleTree(
        *arrays,
        columns=list(data.columns),
        column_info=list(data.encoder.column_info),
        encoder=data.encoder,
        max_rules=max_rules,
        min_leaf=min_leaf,
    )


# -- portable rules -----------------------------------------------------------

RULES_FORMAT = "retain-rules/1"


def _predicate(tree: RuleTree, node: int, go_left: bool) -> dict:
    feat, level = tree.column_info[tree.feature[node]]
    if level is not None:
        return {"feature": feat, "op": "not_in" if go_left else "in", "levels": [level]}
    return {"feature": feat, "op": "<=" if go_left else ">", "value": float(tree.threshold[node])}


def _describe(pred: dict) -> str:
    if pred["op"] in ("in", "not_in"):
        word = "in" if pred["op"] == "in" else "not in"
        return f"{pred['feature']} {word} {{{', '.join(pred['levels'])}}}"
    return f"{pred['feature']} {pred['op']} {pred['value']:g}"


def export_rules(tree: RuleTree, threshold: float = 0.5) -> dict:
    """Root-to-leaf rules in depth-first, left-first order."""
    rules = []

    def walk(node: int, path: list[dict]) -> None:
        if tree.feature[node] < 0:
            p = float(tree.value[node])
            rules.append(
                {
                    "if": list(path),
                    "then": {
                        "class": int(p >= threshold),
                        "probability": p,
                        "support": int(tree.count[node]),
                    },
                }
            )
            return
        walk(int(tree.left[node]), path + [_predicate(tree, node, True)])
        walk(int(tree.right[node]), path + [_predicate(tree, node, False)])

    walk(0, [])
    text = []
    for k, rule in enumerate(rules, start=1):
        cond = " AND ".join(_describe(p) for p in rule["if"]) or "always"
        outcome = "retained" if rule["then"]["class"] else "churned"
        text.append(f"rule {k}: IF {cond} THEN {outcome} (p={rule['then']['probability']:.3f})")
        rule["id"] = k
    return {"format": RULES_FORMAT, "positive_class": "retained", "threshold": threshold, "rules": rules, "text": text}


@dataclass
class RuleSet:
    """Rule document re-imported for scoring raw feature rows."""

    rules: list[dict]
    threshold: float = 0.5

    @classmethod
    def from_document(cls, doc: dict | str) -> RuleSet:
        if isinstance(doc, str):
            doc = json.loads(doc)
        if doc.get("format") != RULES_FORMAT:
            raise ValueError(f"not a {RULES_FORMAT} document")
        return cls(doc["rules"], doc.get("threshold", 0.5))

    @staticmethod
    def _holds(pred: dict, row) -> bool:
        value = row[pred["feature"]]
        op = pred["op"]
        if op == "<=":
            return float(value) <= pred["value"]
        if op == ">":
            return float(value) > pred["value"]
        if op == "in":
            return str(value) in pred["levels"]
        if op == "not_in":
            return str(value) not in pred["levels"]
        raise ValueError(f"unknown operator {op!r}")

    def match(self, row) -> dict:
        for rule in self.rules:
            if all(self._holds(p, row) for p in rule["if"]):
                return rule
        raise ValueError("no rule matched; document is incomplete")

    def classify(self, rows) -> tuple[np.ndarray, np.ndarray]:
        """Classes and probabilities for an iterable of mappings or a DataFrame."""
        if hasattr(rows, "to_dict"):
            rows = rows.to_dict("records")
        hits = [self.match(r)["then"] for r in rows]
        return (
            np.array([h["class"] for h in hits], dtype=np.int64),
            np.array([h["probability"] for h in hits], dtype=np.float64),
        )
