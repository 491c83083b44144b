"""Uniform train / predict contract, the majority-vote ensemble and JSON envelopes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from ..featurize import Dataset, Encoder
from .cart import RuleTree, export_rules, train_rule_tree
from .forest import Forest, train_forest
from .logistic import LinearModel, train_logistic
from .svm import KernelMachine, train_svm

FAMILIES = ("majority", "tree", "lr", "svm", "rf", "ensemble")
ENVELOPE_FORMAT = "retain-model/1"


class ColumnMismatchError(ValueError):
    pass


@dataclass
class Ensemble:
    """Majority vote of LR, SVM and RF; the score is the mean member probability."""

    members: list[Any]
    columns: list[str]
    encoder: Encoder | None = None
    family: str = field(default="ensemble", init=False)

    def __post_init__(self) -> None:
        kinds = sorted(m.family for m in self.members)
        if kinds != ["lr", "rf", "svm"]:
            raise ValueError(f"ensemble needs exactly one lr, svm and rf member, got {kinds}")

    def member_scores(self, data: Dataset) -> np.ndarray:
        return np.stack([m.score(data) for m in self.members], axis=1)

    def score(self, data: Dataset) -> np.ndarray:
        return self.member_scores(data).mean(axis=1)

    def params(self) -> dict:
        return {"members": [envelope(m) for m in self.members]}


@dataclass
class MajorityModel:
    """Constant predictor scoring every row with the training retained fraction."""

    rate: float
    columns: list[str]
    encoder: Encoder | None = None
    family: str = field(default="majority", init=False)

    def score(self, data: Dataset) -> np.ndarray:
        return np.full(len(data), self.rate)

    def params(self) -> dict:
        return {"rate": self.rate}


TrainedModel = Union[MajorityModel, RuleTree, LinearModel, KernelMachine, Forest, Ensemble]


def combine(member_scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Majority of member classes and mean of member scores (rows x members)."""
    votes = (member_scores >= 0.5).sum(axis=1)
    classes = (2 * votes > member_scores.shape[1]).astype(np.int64)
    return classes, member_scores.mean(axis=1)


def predict(model: TrainedModel, rows: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """(classes, scores); single models classify at score >= 0.5."""
    if list(rows.columns) != list(model.columns):
        raise ColumnMismatchError(
            f"row columns {list(rows.columns)} do not match model columns {list(model.columns)}"
        )
    if isinstance(model, Ensemble):
        return combine(model.member_scores(rows))
    scores = np.asarray(model.score(rows), dtype=float)
    return (scores >= 0.5).astype(np.int64), scores


@dataclass(frozen=True)
class ModelSpec:
    """A model family plus hyperparameters; ``train`` turns it into a model."""

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")

    @classmethod
    def parse(cls, text: str) -> ModelSpec:
        return cls(text.strip().lower())

    def with_params(self, **params) -> ModelSpec:
        return ModelSpec(self.family, {**self.params, **params})


def default_specs(seed: int = 0) -> dict[str, ModelSpec]:
    return {
        "tree": ModelSpec("tree", {"max_rules": 4, "min_leaf": 1}),
        "lr": ModelSpec("lr", {}),
        "svm": ModelSpec("svm", {"kernel": "rbf", "C": 1.0, "gamma": 0.1, "seed": seed}),
        "rf": ModelSpec("rf", {"n_trees": 128, "seed": seed}),
    }


def _ensemble_parts(params: dict) -> dict[str, ModelSpec]:
    parts = default_specs(params.get("seed", 0))
    for fam in ("lr", "svm", "rf"):
        if fam in params:
            parts[fam] = ModelSpec(fam, dict(params[fam]))
    return parts


def train(spec: ModelSpec, data: Dataset) -> TrainedModel:
    p = dict(spec.params)
    if spec.family == "majority":
        return MajorityModel(float(np.mean(data.y)), list(data.columns), data.encoder)
    if spec.family == "tree":
        return train_rule_tree(data, p.get("max_rules", 4), p.get("min_leaf", 1))
    if spec.family == "lr":
        terms = p.get("terms")
        return train_logistic(
            data,
            pool=p.get("pool", "auto"),
            max_steps=p.get("max_steps", 100),
            terms=None if terms is None else [tuple(t) for t in terms],
        )
    if spec.family == "svm":
        return _train_svm_capped(data, p)
    if spec.family == "rf":
        return train_forest(
            data,
            n_trees=p.get("n_trees", 128),
            m_try=p.get("m_try"),
            seed=p.get("seed", 0),
            bootstrap=p.get("bootstrap", True),
            min_leaf=p.get("min_leaf", 1),
            n_jobs=p.get("n_jobs", 1),
        )
    parts = _ensemble_parts(p)
    members = [train(parts[f], data) for f in ("lr", "svm", "rf")]
    return Ensemble(members, list(data.columns), data.encoder)


def _train_svm_capped(data: Dataset, p: dict) -> KernelMachine:
    """Optionally fit on a seeded subsample of at most ``max_train_rows`` rows."""
    cap = p.get("max_train_rows")
    seed = p.get("seed", 0)
    if cap is not None and len(data) > cap:
        keep = np.sort(np.random.default_rng(seed).choice(len(data), size=int(cap), replace=False))
        data = data.subset(keep)
    return train_svm(
        data,
        kernel=p.get("kernel", "rbf"),
        C=p.get("C", 1.0),
        gamma=p.get("gamma", 0.1),
        seed=seed,
        calibrate=p.get("calibrate", True),
    )


# -- envelopes ----------------------------------------------------------------


def envelope(model: TrainedModel) -> dict:
    """JSON-ready {family, encoding, parameters}; trees add their rule list."""
    enc = model.encoder.to_dict() if model.encoder is not None else None
    doc = {
        "format": ENVELOPE_FORMAT,
        "family": model.family,
        "columns": list(model.columns),
        "encoding": enc,
        "parameters": model.params(),
    }
    if isinstance(model, RuleTree):
        doc["column_info"] = [list(c) for c in model.column_info]
        doc["rules"] = export_rules(model)
    return doc


def from_envelope(doc: dict | str) -> TrainedModel:
    if isinstance(doc, str):
        doc = json.loads(doc)
    if doc.get("format") != ENVELOPE_FORMAT:
        raise ValueError(f"not a {ENVELOPE_FORMAT} document")
    enc = Encoder.from_dict(doc["encoding"]) if doc.get("encoding") else None
    fam, cols, p = doc["family"], doc["columns"], doc["parameters"]
    if fam == "majority":
        return MajorityModel(float(p["rate"]), cols, enc)
    if fam == "tree":
        return RuleTree.from_params(p, cols, doc["column_info"], enc)
    if fam == "lr":
        return LinearModel.from_params(p, cols, enc)
    if fam == "svm":
        return KernelMachine.from_params(p, cols, enc)
    if fam == "rf":
        return Forest.from_params(p, cols, enc)
    if fam == "ensemble":
        return Ensemble([from_envelope(m) for m in p["members"]], cols, enc)
    raise ValueError(f"unknown model family {fam!r}")


def dumps(model: TrainedModel) -> str:
    return json.dumps(envelope(model), sort_keys=True)
