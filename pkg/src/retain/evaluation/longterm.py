"""How often predicted (or actual) short-term retainers are still playing later."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..featurize import LONG_TERM, SHORT_TERM, EvalWindow, label
from ..telemetry import DAY, EventLog


class SpanError(ValueError):
    pass


@dataclass
class LongTermReport:
    window: EvalWindow
    n_players: int
    base_rate: float
    given_actual: float
    given_predicted: dict[str, float]

    def frame(self) -> pd.DataFrame:
        rows = [("base rate", "all players", self.base_rate)]
        rows.append(("actual short-term retained", "labels", self.given_actual))
        rows += [("predicted short-term retained", name, v) for name, v in self.given_predicted.items()]
        return pd.DataFrame(rows, columns=["condition", "source", "p_long_term"])


def log_span_days(log: EventLog) -> float:
    r = log.rounds
    stamps = np.concatenate([
        log.sessions["end_ts"].to_numpy(dtype=float),
        (r["start_ts"] + r["duration"]).to_numpy(dtype=float),
    ])
    if len(log.installs) == 0 or len(stamps) == 0:
        return 0.0
    return float((stamps.max() - log.installs["install_ts"].min()) / DAY)


def _rate(long: np.ndarray, mask: np.ndarray) -> float:
    return float(long[mask].mean()) if mask.any() else float("nan")


def longterm_analysis(
    log: EventLog,
    predictions: dict[str, pd.Series],
    eval_long: EvalWindow = LONG_TERM,
    eval_short: EvalWindow = SHORT_TERM,
) -> LongTermReport:
    """P(long-term) overall, given actual short-term retention, and given each
    model's short-term prediction. ``predictions`` map name -> 0/1 Series
    indexed by player_id and must cover every player in ``log``."""
    span = log_span_days(log)
    if span < eval_long.end_day:
        raise SpanError(f"log spans {span:.1f} days; long-term window needs {eval_long.end_day}")
    long = label(log, eval_long)
    short = label(log, eval_short).loc[long.index].to_numpy()
    lv = long.to_numpy()
    given = {}
    for name, pred in predictions.items():
        p = pred.reindex(long.index)
        if p.isna().any():
            raise KeyError(f"predictions for {name!r} miss {int(p.isna().sum())} players")
        given[name] = _rate(lv, p.to_numpy().astype(int) == 1)
    return LongTermReport(
        window=eval_long,
        n_players=len(lv),
        base_rate=float(lv.mean()) if len(lv) else float("nan"),
        given_actual=_rate(lv, short == 1),
        given_predicted=given,
    )
