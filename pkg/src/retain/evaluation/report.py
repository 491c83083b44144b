"""Feature tables, result tables in the published layouts, and plain SVG charts."""

from __future__ import annotations

from dataclasses import dataclass
from html import escape
from pathlib import Path

import numpy as np
import pandas as pd

from ..featurize import NUMERIC_FEATURES
from ..learners import Forest, LinearModel
from .cv import CVResult
from .metrics import MetricSet
from .robustness import RobustnessReport

MODEL_LABELS = {"majority": "BASELINE", "tree": "TREE", "lr": "LR", "svm": "SVM", "rf": "RF", "ensemble": "ENSEMBLE"}
FLOAT_FORMAT = "%.6f"


@dataclass
class FeatureReport:
    window: str
    correlations: pd.DataFrame  # feature, correlation, flag
    coefficients: pd.DataFrame | None  # term, weight, std_error, z
    importances: pd.DataFrame | None  # column, importance (descending)


def correlations(frame: pd.DataFrame, target: str, features: list[str] | None = None) -> pd.DataFrame:
    """Pearson r of each numeric feature with the label; constant columns
    report 0 with flag CONSTANT."""
    y = frame[target].to_numpy(dtype=float)
    rows = []
    for feat in features or [f for f in NUMERIC_FEATURES if f in frame]:
        x = frame[feat].to_numpy(dtype=float)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            rows.append((feat, 0.0, "CONSTANT"))
            continue
        xc, yc = x - x.mean(), y - y.mean()
        r = float(xc @ yc / np.sqrt((xc @ xc) * (yc @ yc)))
        rows.append((feat, float(np.clip(r, -1.0, 1.0)), ""))
    return pd.DataFrame(rows, columns=["feature", "correlation", "flag"])


def feature_report(
    window: str,
    frame: pd.DataFrame,
    target: str,
    lr: LinearModel | None = None,
    forest: Forest | None = None,
) -> FeatureReport:
    coef = None
    if lr is not None:
        c = pd.DataFrame(lr.coefficients(), columns=["term", "weight", "std_error"])
        c["z"] = np.where(c["std_error"] > 0, c["weight"] / c["std_error"].where(c["std_error"] > 0, 1.0), 0.0)
        coef = c
    imp = None
    if forest is not None:
        imp = pd.DataFrame(forest.ranked_importance(), columns=["column", "importance"])
    return FeatureReport(window, correlations(frame, target), coef, imp)


# -- tables --------------------------------------------------------------------


def metric_row(m: MetricSet) -> dict:
    return {
        "accuracy": m.accuracy,
        "precision": m.precision,
        "recall": m.recall,
        "f1": m.f1,
        "auc": np.nan if m.auc is None else m.auc,
    }


def heuristic_table(rows: list[tuple[str, str, MetricSet]]) -> pd.DataFrame:
    """(feature window, evaluation window, metrics) per row."""
    return pd.DataFrame(
        [{"feature_window": f, "eval_window": e, **metric_row(m)} for f, e, m in rows]
    )


def model_table(results: dict[str, dict[str, CVResult]]) -> pd.DataFrame:
    """results[window][model] -> one row per (window, model)."""
    rows = []
    for window, per_model in results.items():
        for name, res in per_model.items():
            rows.append({"feature_window": window, "model": MODEL_LABELS.get(name, name.upper()), **metric_row(res.pooled)})
    return pd.DataFrame(rows)


def robustness_table(report: RobustnessReport) -> pd.DataFrame:
    out = report.summary().reset_index().rename(columns={"index": "statistic"})
    return out


def write_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def markdown_table(frame: pd.DataFrame) -> str:
    def cell(v) -> str:
        if isinstance(v, (float, np.floating)):
            return "" if np.isnan(v) else f"{v:.3f}"
        return str(v)

    head = "| " + " | ".join(str(c) for c in frame.columns) + " |"
    rule = "|" + "|".join("---" for _ in frame.columns) + "|"
    body = ["| " + " | ".join(cell(v) for v in row) + " |" for row in frame.itertuples(index=False)]
    return "\n".join([head, rule, *body])


# -- svg -----------------------------------------------------------------------

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
W, H, PAD = 560, 360, 52


def _scale(v, lo, hi, a, b):
    return a + (b - a) * ((v - lo) / (hi - lo) if hi > lo else 0.5)


def _frame_svg(title: str, xlabel: str, ylabel: str, body: list[str], ticks: list[str]) -> str:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.0f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD / 2:.0f}" y2="{H - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD / 2:.0f}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<text x="{W / 2:.0f}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2:.0f}" text-anchor="middle" transform="rotate(-90 14 {H / 2:.0f})">{escape(ylabel)}</text>',
    ]
    return "\n".join(parts + ticks + body + ["</svg>"]) + "\n"


def line_chart(series: dict[str, tuple], title: str, xlabel: str, ylabel: str) -> str:
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = min(0.0, float(ys.min())), float(ys.max())
    body, ticks = [], []
    for k in range(5):
        yv = y0 + (y1 - y0) * k / 4
        py = _scale(yv, y0, y1, H - PAD, PAD / 2)
        ticks.append(f'<text x="{PAD - 4}" y="{py + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
        xv = x0 + (x1 - x0) * k / 4
        px = _scale(xv, x0, x1, PAD, W - PAD / 2)
        ticks.append(f'<text x="{px:.1f}" y="{H - PAD + 16}" text-anchor="middle">{xv:.3g}</text>')
    for n, (name, (x, y)) in enumerate(series.items()):
        color = PALETTE[n % len(PALETTE)]
        pts = " ".join(
            f"{_scale(a, x0, x1, PAD, W - PAD / 2):.1f},{_scale(b, y0, y1, H - PAD, PAD / 2):.1f}"
            for a, b in zip(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        )
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        body.append(f'<text x="{W - PAD / 2 - 4:.0f}" y="{PAD / 2 + 14 * (n + 1):.0f}" text-anchor="end" fill="{color}">{escape(name)}</text>')
    return _frame_svg(title, xlabel, ylabel, body, ticks)


def bar_chart(labels: list[str], values, title: str, ylabel: str) -> str:
    values = np.asarray(values, dtype=float)
    top = float(values.max()) if len(values) and values.max() > 0 else 1.0
    width = (W - 1.5 * PAD) / max(len(labels), 1)
    body, ticks = [], []
    for k, (lab, v) in enumerate(zip(labels, values)):
        x = PAD + k * width
        y = _scale(v, 0.0, top, H - PAD, PAD / 2)
        body.append(f'<rect x="{x + 2:.1f}" y="{y:.1f}" width="{width - 4:.1f}" height="{H - PAD - y:.1f}" fill="{PALETTE[0]}"/>')
        body.append(
            f'<text x="{x + width / 2:.1f}" y="{H - PAD + 10}" font-size="8" text-anchor="end" '
            f'transform="rotate(-45 {x + width / 2:.1f} {H - PAD + 10})">{escape(lab)}</text>'
        )
    ticks.append(f'<text x="{PAD - 4}" y="{PAD / 2 + 4:.0f}" text-anchor="end">{top:.3g}</text>')
    return _frame_svg(title, "", ylabel, body, ticks)
