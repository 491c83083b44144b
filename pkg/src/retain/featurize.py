"""Per-player feature vectors, retention labels and model-matrix encoding."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .telemetry import DAY, DEVICE_TYPES, EventLog

INSTALL_FEATURES = ["device_type", "country", "acquired"]
GAMEPLAY_FEATURES = [
    "total_days",
    "total_sessions",
    "total_rounds",
    "avg_session_duration",
    "avg_round_duration",
    "total_playtime",
    "current_absence_time",
    "avg_time_between_sessions",
    "connected_friends",
    "player_interaction",
    "avg_moves",
    "avg_stars",
    "max_level",
]
LABEL_COLUMNS = ["retained_short", "retained_long"]
FEATURE_COLUMNS = ["player_id"] + INSTALL_FEATURES + GAMEPLAY_FEATURES
CATEGORICAL_FEATURES = ["device_type", "country"]
NUMERIC_FEATURES = ["acquired"] + GAMEPLAY_FEATURES


@dataclass(frozen=True)
class FeatureWindow:
    """Observation interval from install up to a per-player cutoff.

    ``kind`` is ``first_session``, ``first_day`` or ``days`` (with ``n_days``).
    """

    kind: str
    n_days: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ("first_session", "first_day", "days"):
            raise ValueError(f"unknown feature window {self.kind!r}")
        if self.n_days < 1:
            raise ValueError("n_days must be >= 1")

    @classmethod
    def first_session(cls) -> FeatureWindow:
        return cls("first_session")

    @classmethod
    def first_day(cls) -> FeatureWindow:
        return cls("first_day", 1)

    @classmethod
    def days(cls, n: int) -> FeatureWindow:
        return cls("days", n)

    @classmethod
    def parse(cls, text: str) -> FeatureWindow:
        """CLI syntax: ``session``, ``day`` or ``<n>d``."""
        text = text.strip().lower()
        if text == "session":
            return cls.first_session()
        if text == "day":
            return cls.first_day()
        m = re.fullmatch(r"(\d+)d", text)
        if m:
            return cls.days(int(m.group(1)))
        raise ValueError(f"bad feature window {text!r} (expected session|day|<n>d)")

    @property
    def label(self) -> str:
        if self.kind == "first_session":
            return "session"
        if self.kind == "first_day":
            return "day"
        return f"{self.n_days}d"

    def cutoffs(self, log: EventLog) -> pd.Series:
        """Cutoff timestamp per player, indexed by player_id."""
        inst = log.installs.set_index("player_id")["install_ts"]
        if self.kind == "first_session":
            first = log.sessions.drop_duplicates("player_id").set_index("player_id")["end_ts"]
            # players without sessions fall back to install time
            return first.reindex(inst.index).fillna(inst).astype(np.int64)
        return inst + self.n_days * DAY


@dataclass(frozen=True)
class EvalWindow:
    """Half-open label interval ``[start_day, end_day)`` in player-relative days."""

    start_day: int
    end_day: int

    def __post_init__(self) -> None:
        if self.start_day < 0 or self.end_day <= self.start_day:
            raise ValueError(f"invalid evaluation window {self.start_day}:{self.end_day}")

    @classmethod
    def parse(cls, text: str) -> EvalWindow:
        try:
            a, b = text.split(":")
            return cls(int(a), int(b))
        except ValueError:
            raise ValueError(f"bad evaluation window {text!r} (expected start:end)") from None

    @property
    def label(self) -> str:
        return f"{self.start_day}:{self.end_day}"


SHORT_TERM = EvalWindow(8, 14)
LONG_TERM = EvalWindow(60, 67)


def compute_features(log: EventLog, window: FeatureWindow) -> pd.DataFrame:
    """One feature row per player (sorted by player_id), no labels.

    Events count toward a window when they start at or before the cutoff.
    Session durations are clipped at the cutoff.
    """
    inst = log.installs.set_index("player_id")
    players = inst.index.to_numpy()
    cutoff = window.cutoffs(log).reindex(inst.index).to_numpy()
    install_ts = inst["install_ts"].to_numpy()
    window_len = (cutoff - install_ts).astype(float)
    pos = pd.Series(np.arange(len(players)), index=inst.index)

    s = log.sessions
    s_idx = pos.loc[s["player_id"]].to_numpy() if len(s) else np.zeros(0, dtype=int)
    s_start = s["start_ts"].to_numpy()
    keep = s_start <= cutoff[s_idx]
    s_idx, s_start = s_idx[keep], s_start[keep]
    s_end = np.minimum(s["end_ts"].to_numpy()[keep], cutoff[s_idx])
    s_dur = (s_end - s_start).astype(float)

    r = log.rounds
    r_idx = pos.loc[r["player_id"]].to_numpy() if len(r) else np.zeros(0, dtype=int)
    r_start = r["start_ts"].to_numpy()
    keep_r = r_start <= cutoff[r_idx]
    r_idx, r_start = r_idx[keep_r], r_start[keep_r]
    rr = r.loc[keep_r]

    n = len(players)
    count = lambda idx: np.bincount(idx, minlength=n).astype(float)  # noqa: E731
    total = lambda idx, w: np.bincount(idx, weights=w, minlength=n)  # noqa: E731

    def mean(idx, w):
        c = count(idx)
        return np.divide(total(idx, w), c, out=np.zeros(n), where=c > 0)

    def maximum(idx, w):
        out = np.zeros(n)
        np.maximum.at(out, idx, np.asarray(w, dtype=float))
        return out

    n_sessions = count(s_idx)
    day_key = np.unique(np.stack([s_idx, (s_start - install_ts[s_idx]) // DAY]), axis=1)
    total_days = count(day_key[0]) if day_key.size else np.zeros(n)

    # start-to-start gaps between consecutive window sessions (input is sorted)
    same = np.zeros(len(s_idx), dtype=bool)
    same[1:] = s_idx[1:] == s_idx[:-1]
    gaps = np.diff(s_start, prepend=0)[same].astype(float)
    gap_mean = mean(s_idx[same], gaps)
    avg_gap = np.where(n_sessions >= 2, gap_mean, window_len)

    latest = install_ts.astype(float).copy()
    for idx, ts in ((s_idx, s_start), (s_idx, s_end), (r_idx, r_start)):
        np.maximum.at(latest, idx, ts.astype(float))

    out = pd.DataFrame(
        {
            "player_id": players,
            "device_type": inst["device_type"].to_numpy(),
            "country": inst["country"].to_numpy(),
            "acquired": inst["acquired"].to_numpy().astype(int),
            "total_days": total_days,
            "total_sessions": n_sessions,
            "total_rounds": count(r_idx),
            "avg_session_duration": mean(s_idx, s_dur),
            "avg_round_duration": mean(r_idx, rr["duration"].to_numpy()),
            "total_playtime": total(s_idx, s_dur),
            "current_absence_time": cutoff - latest,
            "avg_time_between_sessions": avg_gap,
            "connected_friends": maximum(r_idx, rr["friends_connected"].to_numpy()),
            "player_interaction": total(r_idx, rr["interactions"].to_numpy().astype(float)),
            "avg_moves": mean(r_idx, rr["moves"].to_numpy().astype(float)),
            "avg_stars": mean(r_idx, rr["stars"].to_numpy().astype(float)),
            "max_level": maximum(r_idx, rr["level"].to_numpy()),
        }
    )
    return out.reset_index(drop=True)


def label(log: EventLog, eval_window: EvalWindow) -> pd.Series:
    """1 when the player has a round starting inside the evaluation window."""
    inst = log.installs.set_index("player_id")["install_ts"]
    r = log.rounds
    offset = r["start_ts"].to_numpy() - inst.loc[r["player_id"]].to_numpy()
    hit = (offset >= eval_window.start_day * DAY) & (offset < eval_window.end_day * DAY)
    retained = set(r["player_id"].to_numpy()[hit])
    return pd.Series(
        [int(p in retained) for p in inst.index], index=inst.index, name="retained", dtype=int
    )


def build_frame(
    log: EventLog,
    window: FeatureWindow,
    short: EvalWindow = SHORT_TERM,
    long: EvalWindow = LONG_TERM,
) -> pd.DataFrame:
    """Features plus both labels, in the canonical features-CSV column order."""
    rows = compute_features(log, window)
    rows["retained_short"] = label(log, short).loc[rows["player_id"]].to_numpy()
    rows["retained_long"] = label(log, long).loc[rows["player_id"]].to_numpy()
    return rows


# -- encoding -----------------------------------------------------------------


@dataclass
class Encoder:
    """One-hot levels and standardization statistics fitted on training rows."""

    numeric: list[str]
    means: np.ndarray
    sds: np.ndarray
    levels: dict[str, list[str]]

    @property
    def columns(self) -> list[str]:
        cols = list(self.numeric)
        for feat in CATEGORICAL_FEATURES:
            cols += [f"{feat}={lvl}" for lvl in self.levels[feat]]
        return cols

    @property
    def column_info(self) -> list[tuple[str, str | None]]:
        """(feature, level) per column; level is None for numeric columns."""
        info: list[tuple[str, str | None]] = [(c, None) for c in self.numeric]
        for feat in CATEGORICAL_FEATURES:
            info += [(feat, lvl) for lvl in self.levels[feat]]
        return info

    @classmethod
    def fit(cls, fit_rows: pd.DataFrame, numeric: list[str] | None = None) -> Encoder:
        """``numeric`` overrides the default numeric column list."""
        if len(fit_rows) == 0:
            raise ValueError("cannot fit an encoding on zero rows")
        if numeric is None:
            numeric = [c for c in NUMERIC_FEATURES if c in fit_rows]
        numeric = list(numeric)
        values = fit_rows[numeric].to_numpy(dtype=float)
        means = values.mean(axis=0)
        sds = values.std(axis=0)
        sds = np.where(sds > 0, sds, 1.0)
        levels = {}
        for feat in CATEGORICAL_FEATURES:
            found = set(fit_rows[feat].astype(str))
            if feat == "device_type":
                levels[feat] = [d for d in DEVICE_TYPES if d in found]
            else:
                levels[feat] = sorted(found)
        return cls(numeric, means, sds, levels)

    def raw_matrix(self, rows: pd.DataFrame) -> np.ndarray:
        """Unscaled numeric values followed by one-hot columns."""
        parts = [rows[self.numeric].to_numpy(dtype=float)]
        for feat in CATEGORICAL_FEATURES:
            vals = rows[feat].astype(str).to_numpy()
            parts.append(
                np.stack([vals == lvl for lvl in self.levels[feat]], axis=1).astype(float)
                if self.levels[feat]
                else np.zeros((len(rows), 0))
            )
        return np.hstack(parts)

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        out = raw.copy()
        k = len(self.numeric)
        out[:, :k] = (raw[:, :k] - self.means) / self.sds
        return out

    def transform(self, rows: pd.DataFrame, target: str | None = "retained_short") -> Dataset:
        raw = self.raw_matrix(rows)
        y = None
        if target is not None and target in rows:
            y = rows[target].to_numpy().astype(np.int64)
        return Dataset(
            X=self.standardize(raw),
            X_raw=raw,
            y=y,
            player_ids=rows["player_id"].to_numpy(),
            encoder=self,
        )

    def to_dict(self) -> dict:
        return {
            "numeric": list(self.numeric),
            "means": self.means.tolist(),
            "sds": self.sds.tolist(),
            "levels": {k: list(v) for k, v in self.levels.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> Encoder:
        return cls(
            list(d["numeric"]),
            np.asarray(d["means"], dtype=float),
            np.asarray(d["sds"], dtype=float),
            {k: list(v) for k, v in d["levels"].items()},
        )


@dataclass
class Dataset:
    """Encoded rows.

    ``X`` holds z-scored numeric columns followed by one-hot columns; ``X_raw``
    has the same layout without scaling (trees split on it so thresholds stay
    in natural units).
    """

    X: np.ndarray
    X_raw: np.ndarray
    y: np.ndarray | None
    player_ids: np.ndarray
    encoder: Encoder
    meta: dict = field(default_factory=dict)

    @property
    def columns(self) -> list[str]:
        return self.encoder.columns

    def __len__(self) -> int:
        return len(self.X)

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(
            self.X[idx],
            self.X_raw[idx],
            None if self.y is None else self.y[idx],
            self.player_ids[idx],
            self.encoder,
            dict(self.meta),
        )


def encode(
    rows: pd.DataFrame,
    fit_rows: pd.DataFrame,
    target: str | None = "retained_short",
    numeric: list[str] | None = None,
) -> Dataset:
    """Fit encoding on ``fit_rows`` and apply it to ``rows``."""
    return Encoder.fit(fit_rows, numeric).transform(rows, target=target)


def dataset_from_arrays(
    X: np.ndarray,
    y: np.ndarray | None = None,
    names: list[str] | None = None,
    standardize: bool = False,
) -> Dataset:
    """Wrap a plain numeric matrix as a Dataset (all columns numeric)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    names = names or [f"x{j}" for j in range(X.shape[1])]
    if standardize:
        means = X.mean(axis=0)
        sds = X.std(axis=0)
        sds = np.where(sds > 0, sds, 1.0)
    else:
        means, sds = np.zeros(X.shape[1]), np.ones(X.shape[1])
    enc = Encoder(list(names), means, sds, {f: [] for f in CATEGORICAL_FEATURES})
    return Dataset(
        X=(X - means) / sds,
        X_raw=X.copy(),
        y=None if y is None else np.asarray(y).astype(np.int64),
        player_ids=np.array([f"r{i:06d}" for i in range(len(X))], dtype=object),
        encoder=enc,
    )
