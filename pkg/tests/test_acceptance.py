"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line
that is printed in the pytest terminal summary."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from conftest import record
from test_cart import root_mismatches
from test_evaluation import brute_force_neighbors, mann_whitney, metric_deviation
from test_logistic import gradient_errors
from test_svm import beaten_counts

from retain import cli
from retain.evaluation import auc_score, benchmark, labelled_frame, make_folds, neighbor_table, robustness_study
from retain.evaluation import trapezoid_auc, roc_points
from retain.featurize import CATEGORICAL_FEATURES, FeatureWindow, compute_features, encode, label
from retain.featurize import LONG_TERM, SHORT_TERM
from retain.learners import ModelSpec, RuleSet, export_rules, predict, select_lr_terms, train_rule_tree, train_svm
from retain.learners.logistic import fit_newton, sigmoid
from retain.featurize import dataset_from_arrays
from retain.synthcohort import GeneratorConfig, generate
from retain.telemetry import DAY, apply_cohort_filter, parse_lines

WINDOWS = {"session": FeatureWindow.first_session(), "day": FeatureWindow.first_day(), "7d": FeatureWindow.days(7)}
FAMILIES = ["tree", "lr", "svm", "rf", "ensemble"]


@pytest.fixture(scope="module")
def cohort_20k():
    """The default generator at 20,000 players, seed 7, after the cohort filter."""
    start = time.perf_counter()
    log = apply_cohort_filter(parse_lines(generate(GeneratorConfig(n_players=20_000, seed=7)).lines))
    return log, time.perf_counter() - start


# -- 1 -----------------------------------------------------------------------------


def test_criterion_01_metric_oracle() -> None:
    start = time.perf_counter()
    worst = metric_deviation(100, 2024)
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, 1000)
    s = np.round(rng.normal(size=1000) + 0.7 * y, 2)
    want = mann_whitney(y, s)
    auc_err = max(abs(auc_score(y, s) - want), abs(trapezoid_auc(roc_points(y, s)) - want))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and auc_err <= 1e-9 and elapsed < 5
    detail = f"max metric error {worst:.1e}, AUC error {auc_err:.1e}, {elapsed:.2f} s"
    assert record(1, "metric oracle", ok, detail), detail


# -- 2 -----------------------------------------------------------------------------


def test_criterion_02_split_oracle() -> None:
    bad = root_mismatches(200, 2)
    assert record(2, "split oracle", bad == 0, f"{bad} mismatches on 200 micro-datasets"), bad


# -- 3 -----------------------------------------------------------------------------


def test_criterion_03_gradient_check() -> None:
    errs = gradient_errors(50, 3)
    rng = np.random.default_rng(3)
    monotone = True
    for _ in range(50):
        n, k = int(rng.integers(30, 300)), int(rng.integers(2, 6))
        Z = np.c_[np.ones(n), rng.normal(scale=2, size=(n, k - 1))]
        y = (rng.random(n) < sigmoid(Z @ rng.normal(size=k))).astype(float)
        h = fit_newton(Z, y).history
        monotone &= all(b <= a for a, b in zip(h, h[1:]))
    ok = max(errs) < 1e-4 and monotone
    detail = f"max relative gradient error {max(errs):.1e} over 50 points; NLL monotone: {monotone}"
    assert record(3, "LR gradient check", ok, detail), detail


# -- 4 -----------------------------------------------------------------------------


def test_criterion_04_svm_optimality() -> None:
    beaten = beaten_counts(20, 10_000)
    X = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    y = np.array([1, 1, 0, 0])
    d = dataset_from_arrays(X, y)
    acc = float(np.mean(predict(train_svm(d, kernel="rbf", C=10.0, gamma=1.0, calibrate=False), d)[0] == y))
    ok = sum(beaten) == 0 and acc == 1.0
    detail = f"random feasible points beating the solver: {sum(beaten)} of 200,000; XOR accuracy {acc:.1f}"
    assert record(4, "SVM optimality", ok, detail), detail


# -- 5 -----------------------------------------------------------------------------


def post_cutoff_lines(log, window: FeatureWindow, rng: np.random.Generator) -> list[str]:
    """New sessions and rounds starting strictly after each player's cutoff,
    plus late rounds inside sessions that straddle the cutoff."""
    cut = window.cutoffs(log)
    lines = []
    for pid, c in cut.items():
        c = int(c)
        for j in range(int(rng.integers(1, 4))):
            start = c + int(rng.integers(1, 3 * DAY))
            sid = f"late-{j}"
            lines.append(json.dumps({"type": "session", "player_id": pid, "session_id": sid,
                                     "start_ts": start, "end_ts": start + 900}))
            for t in range(int(rng.integers(1, 4))):
                lines.append(json.dumps({"type": "round", "player_id": pid, "session_id": sid,
                                         "start_ts": start + 60 * t, "duration": 50, "moves": 12, "stars": 3,
                                         "level": 99, "friends_connected": 9, "interactions": 9}))
    s = log.sessions
    straddle = s[(s["start_ts"] <= s["player_id"].map(cut)) & (s["end_ts"] > s["player_id"].map(cut))]
    for pid, sid, end in zip(straddle["player_id"], straddle["session_id"], straddle["end_ts"]):
        lines.append(json.dumps({"type": "round", "player_id": pid, "session_id": sid,
                                 "start_ts": int(cut[pid]) + 1 if int(cut[pid]) + 1 <= end else int(end),
                                 "duration": 30, "moves": 5, "stars": 1, "level": 98,
                                 "friends_connected": 7, "interactions": 7}))
    return lines


def test_criterion_05_leakage(synth_small) -> None:
    keep_lines = []
    base = apply_cohort_filter(parse_lines(synth_small.lines))
    players = set(base.installs["player_id"].iloc[:500])
    for ln in synth_small.lines:
        if json.loads(ln)["player_id"] in players:
            keep_lines.append(ln)
    log = apply_cohort_filter(parse_lines(keep_lines))
    assert len(log.installs) == 500
    rng = np.random.default_rng(5)
    violations, cells, appended = 0, 0, 0
    for w in (FeatureWindow.first_session(), FeatureWindow.first_day(), FeatureWindow.days(3), FeatureWindow.days(7)):
        extra = post_cutoff_lines(log, w, rng)
        grown = parse_lines(keep_lines + extra)
        assert grown.rejected == ()
        appended += len(extra)
        a = compute_features(log, w).set_index("player_id")
        b = compute_features(apply_cohort_filter(grown), w).set_index("player_id").loc[a.index]
        violations += int((a.to_numpy() != b.to_numpy()).sum())
        cells += a.size
    detail = f"{violations} changed values of {cells} after appending {appended} post-cutoff events"
    assert record(5, "leakage property", violations == 0, detail), detail


# -- 6 and 7 -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def window_benchmark(cohort_20k):
    log, gen_seconds = cohort_20k
    start = time.perf_counter()
    plan = make_folds(log.installs["player_id"], 10, 7)
    out = {}
    for name, window in WINDOWS.items():
        frame = labelled_frame(log, window, SHORT_TERM)
        terms = select_lr_terms(encode(frame, frame, target="target"), 10_000, 7)
        specs = {
            "majority": ModelSpec("majority"),
            "tree": ModelSpec("tree", {"max_rules": 4}),
            "lr": ModelSpec("lr", {"terms": [list(t) for t in terms]}),
            "svm": ModelSpec("svm", {"kernel": "rbf", "C": 1.0, "gamma": 0.05, "max_train_rows": 4000, "seed": 7}),
            "rf": ModelSpec("rf", {"n_trees": 64, "min_leaf": 5, "seed": 7}),
        }
        res = benchmark(frame, specs, plan, target="target")
        out[name] = {k: v.pooled.accuracy for k, v in res.items()}
    return out, gen_seconds + time.perf_counter() - start


@pytest.mark.slow
def test_criterion_06_window_ordering(window_benchmark) -> None:
    acc, seconds = window_benchmark
    majority = acc["session"]["majority"]
    ordered = all(acc["session"][f] < acc["day"][f] < acc["7d"][f] for f in FAMILIES)
    above = all(acc[w][f] > acc[w]["majority"] for w in WINDOWS for f in FAMILIES)
    gap = min(acc["7d"][f] - acc["session"][f] for f in FAMILIES)
    ok = ordered and above and gap >= 0.05 and abs(majority - 0.595) <= 0.015 and seconds < 600
    table = "; ".join(f"{w}: " + " ".join(f"{f}={acc[w][f]:.4f}" for f in ["majority"] + FAMILIES) for w in WINDOWS)
    detail = (f"ordered={ordered}, above majority={above}, min(7d - session)={gap:.4f}, "
              f"majority={majority:.4f}, {seconds:.0f} s | {table}")
    assert record(6, "window ordering", ok, detail), detail


@pytest.mark.slow
def test_criterion_07_heuristic_gap(window_benchmark) -> None:
    acc, _ = window_benchmark
    gaps = {w: max(acc[w][f] for f in ("lr", "svm", "rf", "ensemble")) - acc[w]["tree"] for w in WINDOWS}
    ok = all(g <= 0.03 for g in gaps.values())
    detail = ", ".join(f"{w} {g:+.4f}" for w, g in gaps.items())
    assert record(7, "heuristic gap", ok, f"best ML minus tree: {detail}"), detail


# -- 8 -------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def robustness_data():
    log = apply_cohort_filter(parse_lines(generate(GeneratorConfig(n_players=5000, seed=7)).lines))
    frame = labelled_frame(log, FeatureWindow.first_day(), SHORT_TERM)
    return encode(frame, frame, target="target")


def robustness_passes(summary: pd.DataFrame) -> tuple[float, float]:
    return float(summary.loc["std"].max()), float((summary.loc["mean"] - summary.loc["mean"].iloc[0]).abs().max())


# study seed fixed in advance to match the generator seed; not chosen by outcome
ROBUSTNESS_SEED = 7


def test_criterion_08_robustness(robustness_data) -> None:
    data = robustness_data
    std, dev = robustness_passes(robustness_study(data, seed=ROBUSTNESS_SEED).summary())
    rows = np.sort(np.random.default_rng(8).choice(len(data), 200, replace=False))
    sub = data.subset(rows)
    query, pool = np.arange(40), np.arange(40, 200)
    mismatches = int((neighbor_table(sub, query, pool, 9) != brute_force_neighbors(sub, query, pool, 9)).sum())
    sweep = [robustness_passes(robustness_study(data, seed=s).summary()) for s in range(50)]
    passing = sum(a < 0.02 and b <= 0.02 for a, b in sweep)
    ok = std < 0.02 and dev <= 0.02 and mismatches == 0
    detail = (f"{len(data)} rows, study seed {ROBUSTNESS_SEED}: max level std {std:.4f}, max |mean - level-0 mean| {dev:.4f}, "
              f"neighbor mismatches {mismatches}; informational: {passing}/50 study seeds meet both bounds")
    assert record(8, "robustness analogue", ok, detail), detail


# -- 9 -------------------------------------------------------------------------------


def test_criterion_09_calibration(cohort_20k) -> None:
    log, _ = cohort_20k
    short = float(label(log, SHORT_TERM).mean())
    long = float(label(log, LONG_TERM).mean())
    ok = abs(short - 0.405) <= 0.015 and abs(long - 0.152) <= 0.02
    detail = f"short-term {short:.4f} (0.405 +/- 0.015), long-term {long:.4f} (0.152 +/- 0.02), {len(log.installs)} players"
    assert record(9, "calibration", ok, detail), detail


# -- 10 ------------------------------------------------------------------------------


def random_vectors(frame: pd.DataFrame, numeric: list[str], thresholds: dict[str, list[float]], n: int, seed: int):
    rng = np.random.default_rng(seed)
    out = {}
    for col in numeric:
        v = frame[col].to_numpy(dtype=float)
        lo, hi = v.min(), v.max()
        pad = (hi - lo) * 0.2 + 1
        draw = rng.uniform(lo - pad, hi + pad, n)
        pick = rng.random(n)
        ints = np.round(draw)
        draw = np.where(pick < 0.3, ints, draw)
        if thresholds.get(col):
            at = np.asarray(thresholds[col])[rng.integers(0, len(thresholds[col]), n)]
            draw = np.where(pick > 0.85, at, draw)
        out[col] = draw
    for col in CATEGORICAL_FEATURES:
        levels = sorted(frame[col].unique()) + ["unseen-level"]
        out[col] = np.asarray(levels, dtype=object)[rng.integers(0, len(levels), n)]
    out["player_id"] = [f"v{i:06d}" for i in range(n)]
    return pd.DataFrame(out)


def test_criterion_10_rule_round_trip(cohort_small) -> None:
    mismatches, trees = 0, 0
    for w in (FeatureWindow.first_day(), FeatureWindow.days(7)):
        frame = labelled_frame(cohort_small, w, SHORT_TERM)
        data = encode(frame, frame, target="target")
        numeric = list(data.encoder.numeric)
        for k in (1, 4, 8):
            tree = train_rule_tree(data, max_rules=k)
            thr: dict[str, list[float]] = {}
            for f, t in zip(tree.feature, tree.threshold):
                if f >= 0 and data.columns[f] in numeric:
                    thr.setdefault(data.columns[f], []).append(float(t))
            rows = random_vectors(frame, numeric, thr, 10_000, 100 * k)
            doc = json.loads(json.dumps(export_rules(tree)))
            got, _ = RuleSet.from_document(doc).classify(rows)
            want, _ = predict(tree, data.encoder.transform(rows, target=None))
            mismatches += int((got != want).sum())
            trees += 1
    detail = f"{mismatches} mismatches over {trees} trees x 10,000 random vectors"
    assert record(10, "rule export round trip", mismatches == 0, detail), detail


# -- 11 ------------------------------------------------------------------------------

FAST = ["--cv", "3", "--rf-trees", "8", "--svm-max-rows", "300", "--lr-subsample", "500"]


def subcommand_args(events: Path) -> dict[str, list[str]]:
    ev = ["--events", str(events), "--seed", "11"]
    return {
        "synth": ["--players", "600", "--seed", "11"],
        "ingest": ev,
        "featurize": ev + ["--feature-window", "3d"],
        "train": ev + ["--model", "ensemble", "--rf-trees", "8", "--svm-max-rows", "300", "--lr-subsample", "500"],
        "tune": ev + ["--family", "rf", "--grid", '{"n_trees": [4, 8], "m_try": ["sqrt"]}', "--cv", "3"],
        "evaluate": ev + ["--feature-window", "session,day", "--models", "tree,lr,svm,rf,ensemble", *FAST],
        "heuristic": ev + ["--feature-window", "day", "--cv", "3"],
        "robustness": ev + ["--feature-window", "day"],
        "report": ev + ["--windows", "day,7d", "--heuristic-pairs", "day@8:14,3d@8:14", *FAST],
    }


def test_criterion_11_determinism(tmp_path) -> None:
    events = tmp_path / "input" / "ev.jsonl"
    assert cli.run(["synth", "--players", "900", "--seed", "5", "--out", str(events)]) == 0
    differing, codes = [], {}
    for command, args in subcommand_args(events).items():
        digests = []
        for rep in ("a", "b"):
            out = tmp_path / command / rep
            if command == "synth":
                argv = [command, *args, "--out", str(out / "ev.jsonl")]
            else:
                argv = [command, *args, "--out-dir", str(out)]
            codes[(command, rep)] = cli.run(argv)
            m = cli.RunManifest.read(out / cli.manifest_name(command))
            digests.append((m.outputs, list(m.inputs.values())))
        if digests[0] != digests[1] or not digests[0][0]:
            differing.append(command)
    ok = not differing and all(c == 0 for c in codes.values())
    detail = f"{len(subcommand_args(events))} subcommands run twice; differing manifests: {differing or 'none'}"
    assert record(11, "determinism", ok, detail), (detail, codes)
