"""``retain`` command line: one subcommand per pipeline stage, each writing a
run manifest with content digests of everything it produced."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .evaluation import (
    FoldError,
    NeighborError,
    SpanError,
    benchmark,
    feature_report,
    labelled_frame,
    longterm_analysis,
    make_folds,
    robustness_study,
    roc_points,
)
from .evaluation.report import (
    bar_chart,
    heuristic_table,
    line_chart,
    markdown_table,
    model_table,
    robustness_table,
    write_csv,
)
from .featurize import LONG_TERM, SHORT_TERM, EvalWindow, FeatureWindow, build_frame, encode
from .learners import (
    ColumnMismatchError,
    ConvergenceError,
    ModelSpec,
    RuleSet,
    dumps,
    export_rules,
    predict,
    select_lr_terms,
    train,
    train_forest,
    train_logistic,
    train_rule_tree,
    tune,
)
from .learners.tuning import grid_points
from .synthcohort import CalibrationError, GeneratorConfig, calibrate, generate, truth_path
from .telemetry import (
    EventLog,
    SchemaError,
    apply_cohort_filter,
    cohort_summary,
    parse_events,
    write_jsonl,
    write_rejected,
)

PROG = "retain"
EXIT_OK, EXIT_INVALID, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2, 64
DEFAULT_SEED = 0
HEURISTIC_PAIRS = "session@8:14,day@8:14,day@2:8,3d@4:10,7d@8:14"


class ValidationFailure(Exception):
    """Input or configuration rejected; maps to exit code 1."""


class UsageError(Exception):
    """Maps to exit code 64."""


VALIDATION_ERRORS = (
    ValidationFailure,
    SchemaError,
    CalibrationError,
    SpanError,
    NeighborError,
    ColumnMismatchError,
    ConvergenceError,
    FileNotFoundError,
    NotADirectoryError,
    IsADirectoryError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- manifest -----------------------------------------------------------------


def digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def digest_tree(path: Path) -> dict[str, str]:
    if path.is_dir():
        return {str(p.relative_to(path)): digest(p) for p in sorted(path.rglob("*")) if p.is_file()}
    return {path.name: digest(path)}


@dataclass
class RunManifest:
    subcommand: str
    parameters: dict
    seed: int
    inputs: dict[str, dict[str, str]] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    tool: str = PROG
    version: str = __version__
    started: str = ""
    finished: str = ""
    notes: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> RunManifest:
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


def manifest_name(subcommand: str) -> str:
    return f"{subcommand}.manifest.json"


def _stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


@dataclass
class Run:
    """What a handler receives: resolved args plus helpers for writing outputs."""

    args: argparse.Namespace
    out_dir: Path
    seed: int
    outputs: list[Path] = field(default_factory=list)
    inputs: list[Path] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(p)
        return p

    def adopt(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(path)
        return path

    def csv(self, frame: pd.DataFrame, name: str) -> Path:
        return write_csv(frame, self.path(name))

    def text(self, body: str, name: str) -> Path:
        p = self.path(name)
        p.write_text(body, encoding="utf-8", newline="\n")
        return p

    def json(self, obj, name: str) -> Path:
        return self.text(json.dumps(obj, indent=2, sort_keys=True) + "\n", name)


# -- argument types -------------------------------------------------------------


def _feature_window(text: str) -> str:
    try:
        FeatureWindow.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    return text


def _eval_window(text: str) -> str:
    try:
        EvalWindow.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    return text


def _period(text: str) -> str:
    parts = text.split(":")
    if len(parts) != 2 or not all(p.strip().lstrip("-").isdigit() for p in parts):
        raise argparse.ArgumentTypeError("expected START:END epoch seconds")
    return text


def _model_list(text: str) -> str:
    names = [t.strip() for t in text.split(",") if t.strip()]
    bad = [n for n in names if n not in ("majority", "tree", "lr", "svm", "rf", "ensemble")]
    if not names or bad:
        raise argparse.ArgumentTypeError(f"unknown model(s) {bad or text!r}")
    return ",".join(names)


def _window_list(text: str) -> str:
    for w in text.split(","):
        _feature_window(w.strip())
    return text


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError("must lie in [0, 1)")
    return v


# -- parser -------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, out_dir: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (fallback: $RETAIN_SEED, then 0)")
    p.add_argument("--config", default=None, help="JSON file of flag values (flags take precedence)")
    p.add_argument("--threads", type=_positive_int, default=None, help="worker threads (default: all cores)")
    if out_dir:
        p.add_argument("--out-dir", default=".", help="directory receiving every output")


def _data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--events", required=True, help="JSONL event file or directory of the three CSV files")
    p.add_argument("--format", choices=("auto", "jsonl", "csv"), default="auto")
    p.add_argument("--study-period", type=_period, default=None, help="bound install_ts to [START, END)")


def _windows(p: argparse.ArgumentParser, default: str = "day") -> None:
    p.add_argument("--feature-window", type=_feature_window, default=default, help="session | day | Nd")
    p.add_argument("--eval-window", type=_eval_window, default="8:14", help="START:END days, half-open")


def _models(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-rules", type=_positive_int, default=4)
    p.add_argument("--min-leaf", type=_positive_int, default=1)
    p.add_argument("--lr-search", choices=("once", "per-fold"), default="once",
                   help="stepwise term search on a subsample once, or inside every fold")
    p.add_argument("--lr-subsample", type=_positive_int, default=10_000)
    p.add_argument("--svm-kernel", choices=("linear", "rbf"), default="rbf")
    p.add_argument("--svm-c", type=float, default=1.0)
    p.add_argument("--svm-gamma", type=float, default=0.05)
    p.add_argument("--svm-max-rows", type=int, default=4000,
                   help="fit the SVM on at most this many training rows (0: all)")
    p.add_argument("--rf-trees", type=_positive_int, default=128)
    p.add_argument("--rf-mtry", type=int, default=None)
    p.add_argument("--rf-min-leaf", type=_positive_int, default=1)


def build_parser() -> tuple[_Parser, dict[str, _Parser]]:
    parser = _Parser(prog=PROG, description="Retention prediction from game telemetry.")
    parser.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)
    subs: dict[str, _Parser] = {}

    p = sub.add_parser("synth", help="generate a synthetic event log")
    _common(p, out_dir=False)
    p.add_argument("--players", type=_positive_int, default=20_000)
    p.add_argument("--out", required=True, help="output JSONL path (sidecars are written next to it)")
    p.add_argument("--corruption-rate", type=_fraction, default=0.0)
    p.add_argument("--calibrate", action="store_true", help="re-run hazard calibration first")
    p.add_argument("--target-short", type=float, default=0.405)
    p.add_argument("--target-long", type=float, default=0.152)
    subs["synth"] = p

    p = sub.add_parser("ingest", help="validate a log, write clean events, rejects and cohort series")
    _common(p)
    _data(p)
    p.add_argument("--strict", action="store_true", help="exit 1 when any record is rejected")
    subs["ingest"] = p

    p = sub.add_parser("featurize", help="write the features CSV for one window")
    _common(p)
    _data(p)
    _windows(p)
    p.add_argument("--long-window", type=_eval_window, default="60:67")
    subs["featurize"] = p

    p = sub.add_parser("train", help="train one model on all players and export it")
    _common(p)
    _data(p)
    _windows(p)
    p.add_argument("--model", type=_model_list, default="lr")
    _models(p)
    subs["train"] = p

    p = sub.add_parser("tune", help="grid search with cross-validated accuracy")
    _common(p)
    _data(p)
    _windows(p)
    p.add_argument("--family", choices=("svm", "rf", "forest"), required=True)
    p.add_argument("--grid", default=None, help="JSON object of parameter lists (default grid otherwise)")
    p.add_argument("--subsample", type=_positive_int, default=10_000)
    p.add_argument("--cv", type=_positive_int, default=10)
    subs["tune"] = p

    p = sub.add_parser("evaluate", help="cross-validated comparison on shared folds")
    _common(p)
    _data(p)
    p.add_argument("--feature-window", type=_window_list, default="session,day,7d",
                   help="one window or a comma-separated list")
    p.add_argument("--eval-window", type=_eval_window, default="8:14")
    p.add_argument("--models", type=_model_list, default="lr,svm,rf,ensemble")
    p.add_argument("--cv", type=_positive_int, default=10)
    _models(p)
    subs["evaluate"] = p

    p = sub.add_parser("heuristic", help="train the small rule tree and export its rules")
    _common(p)
    _data(p)
    _windows(p)
    p.add_argument("--max-rules", type=_positive_int, default=4)
    p.add_argument("--min-leaf", type=_positive_int, default=1)
    p.add_argument("--export", default="rules.json", help="rule document name inside --out-dir")
    p.add_argument("--cv", type=int, default=10, help="folds for the accuracy estimate (0: skip)")
    subs["heuristic"] = p

    p = sub.add_parser("robustness", help="chunk / nearest-neighbour perturbation study")
    _common(p)
    _data(p)
    _windows(p)
    p.add_argument("--max-rules", type=_positive_int, default=4)
    p.add_argument("--min-leaf", type=_positive_int, default=1)
    p.add_argument("--chunks", type=_positive_int, default=10)
    p.add_argument("--max-level", type=_positive_int, default=9)
    p.add_argument("--rotate", action="store_true", help="use every chunk as hold-out in turn")
    subs["robustness"] = p

    p = sub.add_parser("report", help="full report: tables, series, features, long-term analysis")
    _common(p)
    _data(p)
    p.add_argument("--windows", type=_window_list, default="session,day,7d")
    p.add_argument("--heuristic-pairs", default=HEURISTIC_PAIRS,
                   help="comma-separated WINDOW@START:END pairs for the heuristic table")
    p.add_argument("--models", type=_model_list, default="lr,svm,rf,ensemble")
    p.add_argument("--cv", type=_positive_int, default=10)
    p.add_argument("--robustness-window", type=_feature_window, default="day")
    _models(p)
    subs["report"] = p
    return parser, subs


def _peek_config(argv: list[str], subs: dict[str, _Parser]) -> tuple[str | None, str | None]:
    """The subcommand and --config value, found before full parsing so that
    the config can satisfy required flags."""
    command = next((a for a in argv if a in subs), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def _apply_config(argv: list[str], parser: _Parser, subs: dict[str, _Parser]) -> argparse.Namespace:
    """Flags > config file > defaults. The config may supply required flags."""
    command, config = _peek_config(argv, subs)
    if command is None or config is None:
        return parser.parse_args(argv)
    try:
        with open(config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationFailure(f"cannot read config {config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationFailure("config must be a flat JSON object")
    sub = subs[command]
    known = {a.dest: a for a in sub._actions}
    values = {}
    for key, value in cfg.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            raise UsageError(f"{PROG} {command}: unknown config key {key!r}")
        action = known[dest]
        if isinstance(value, str) and action.type is not None:
            try:
                value = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"{PROG} {command}: bad config value for {key!r}: {exc}") from exc
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{PROG} {command}: bad config value for {key!r}: {value!r}")
        values[dest] = value
        action.required = False
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def resolve_seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get("RETAIN_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError as exc:
            raise ValidationFailure(f"RETAIN_SEED must be an integer, got {env!r}") from exc
    return DEFAULT_SEED


# -- shared loading ------------------------------------------------------------


def _study_period(args) -> tuple[int, int] | None:
    if not args.study_period:
        return None
    a, b = (int(x) for x in args.study_period.split(":"))
    return a, b


def load_log(run: Run) -> EventLog:
    src = Path(run.args.events)
    if not src.exists():
        raise FileNotFoundError(f"events not found: {src}")
    fmt = run.args.format
    if fmt == "auto":
        fmt = "csv" if src.is_dir() else "jsonl"
    run.inputs.append(src)
    log = parse_events(src if fmt == "csv" else str(src), format=fmt, study_period=_study_period(run.args))
    run.notes["rejected_records"] = len(log.rejected)
    return log


def cohort(run: Run) -> EventLog:
    log = apply_cohort_filter(load_log(run))
    if len(log.installs) == 0:
        raise ValidationFailure("no players pass the cohort filter")
    run.notes["cohort_players"] = len(log.installs)
    return log


def threads(run: Run) -> int:
    return run.args.threads or os.cpu_count() or 1


def model_specs(run: Run, names: list[str], frame: pd.DataFrame, target: str = "target") -> dict[str, ModelSpec]:
    a = run.args
    specs: dict[str, ModelSpec] = {}
    lr_params: dict = {}
    if "lr" in names or "ensemble" in names:
        if a.lr_search == "once":
            full = encode(frame, frame, target=target)
            lr_params["terms"] = [list(t) for t in select_lr_terms(full, a.lr_subsample, run.seed)]
    svm_params = {"kernel": a.svm_kernel, "C": a.svm_c, "gamma": a.svm_gamma, "seed": run.seed}
    if a.svm_max_rows:
        svm_params["max_train_rows"] = a.svm_max_rows
    rf_params = {"n_trees": a.rf_trees, "seed": run.seed, "min_leaf": a.rf_min_leaf, "n_jobs": threads(run)}
    if a.rf_mtry:
        rf_params["m_try"] = a.rf_mtry
    table = {
        "majority": ModelSpec("majority"),
        "tree": ModelSpec("tree", {"max_rules": a.max_rules, "min_leaf": a.min_leaf}),
        "lr": ModelSpec("lr", lr_params),
        "svm": ModelSpec("svm", svm_params),
        "rf": ModelSpec("rf", rf_params),
    }
    for name in names:
        if name == "ensemble":
            for member in ("lr", "svm", "rf"):
                specs.setdefault(member, table[member])
        else:
            specs[name] = table[name]
    return specs


def _window_names(text: str) -> list[str]:
    return [w.strip() for w in text.split(",") if w.strip()]


def _order_results(results: dict, names: list[str]) -> dict:
    return {n: results[n] for n in names if n in results}


# -- handlers -----------------------------------------------------------------


def cmd_synth(run: Run) -> None:
    a = run.args
    config = GeneratorConfig(
        n_players=a.players,
        seed=run.seed,
        target_short_retention=a.target_short,
        target_long_retention=a.target_long,
        corruption_rate=a.corruption_rate,
    )
    if a.calibrate:
        config = calibrate(config)
    out = generate(config)
    target = Path(a.out)
    target.parent.mkdir(parents=True, exist_ok=True)
    out.write(target)
    run.adopt(target)
    run.adopt(truth_path(target))
    run.notes["lines"] = len(out.lines)
    run.notes["corrupted_lines"] = len(out.corrupted)
    run.notes["generator"] = config.to_dict()


def cmd_ingest(run: Run) -> int:
    log = load_log(run)
    src = Path(run.args.events)
    write_jsonl(log, run.path("clean.jsonl"))
    write_rejected(log, run.path(f"{src.name}.rejected.jsonl"))
    write_jsonl(apply_cohort_filter(log), run.path("cohort.jsonl"))
    summary = cohort_summary(log)
    run.csv(summary.funnel_frame(), "funnel.csv")
    run.csv(summary.series_frame(), "active_players.csv")
    reasons = pd.Series([r.reason for r in log.rejected], dtype=object).value_counts().sort_index()
    run.notes["funnel"] = summary.funnel
    run.notes["rejected_by_reason"] = {k: int(v) for k, v in reasons.items()}
    print(f"installs={len(log.installs)} sessions={len(log.sessions)} rounds={len(log.rounds)} rejected={len(log.rejected)}")
    if run.args.strict and log.rejected:
        print(f"{len(log.rejected)} records rejected (--strict)", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def cmd_featurize(run: Run) -> None:
    a = run.args
    log = cohort(run)
    window = FeatureWindow.parse(a.feature_window)
    frame = build_frame(log, window, EvalWindow.parse(a.eval_window), EvalWindow.parse(a.long_window))
    run.csv(frame, f"features_{window.label}.csv")


def cmd_train(run: Run) -> None:
    a = run.args
    log = cohort(run)
    frame = labelled_frame(log, FeatureWindow.parse(a.feature_window), EvalWindow.parse(a.eval_window))
    data = encode(frame, frame, target="target")
    name = a.model.split(",")[0]
    specs = model_specs(run, [name], frame)
    if name == "lr" and a.lr_search == "once":
        # on the full data the stepwise search is the fit itself
        specs["lr"] = ModelSpec("lr", {})
    if name == "ensemble":
        spec = ModelSpec("ensemble", {"seed": run.seed, **{f: dict(specs[f].params) for f in ("lr", "svm", "rf")}})
    else:
        spec = specs[name]
    model = train(spec, data)
    run.text(dumps(model) + "\n", f"model_{name}.json")
    classes, _ = predict(model, data)
    run.notes["training_accuracy"] = float(np.mean(classes == data.y))


def cmd_tune(run: Run) -> None:
    a = run.args
    log = cohort(run)
    frame = labelled_frame(log, FeatureWindow.parse(a.feature_window), EvalWindow.parse(a.eval_window))
    data = encode(frame, frame, target="target")
    grid = None
    if a.grid:
        try:
            grid = json.loads(a.grid)
            grid_points(grid)
        except (json.JSONDecodeError, ValueError, AttributeError) as exc:
            raise ValidationFailure(f"bad --grid: {exc}") from exc
    fixed = {"n_jobs": threads(run)} if a.family in ("rf", "forest") else None
    res = tune(data, a.family, grid, subsample=a.subsample, seed=run.seed, n_folds=a.cv, fixed=fixed)
    rows = [{**{k: v for k, v in pt.items()}, "cv_accuracy": acc} for pt, acc in res.table]
    run.csv(pd.DataFrame(rows), "tuning.csv")
    run.json({"family": a.family, "best": res.best, "subsample_rows": res.n_rows, "seed": res.seed}, "best.json")


def _benchmark_window(run: Run, log: EventLog, window: str, eval_window: EvalWindow, names: list[str], plan):
    frame = labelled_frame(log, FeatureWindow.parse(window), eval_window)
    specs = model_specs(run, names, frame)
    results = benchmark(frame, specs, plan, target="target", ensemble="ensemble" in names)
    return frame, specs, _order_results(results, names)


def _prediction_frames(per_window: dict) -> tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    folds, preds, rocs = [], [], []
    for window, results in per_window.items():
        for name, res in results.items():
            for k, m in enumerate(res.folds):
                folds.append({"feature_window": window, "model": name, "fold": k, **m.to_dict()})
            p = res.predictions.assign(feature_window=window, model=name)
            preds.append(p[["feature_window", "model", "player_id", "fold", "label", "class", "score"]])
            roc = roc_points(res.predictions["label"], res.predictions["score"])
            rocs.append(roc.assign(feature_window=window, model=name)[["feature_window", "model", "fpr", "tpr", "threshold"]])
    return pd.DataFrame(folds), pd.concat(preds, ignore_index=True), pd.concat(rocs, ignore_index=True)


def cmd_evaluate(run: Run) -> None:
    a = run.args
    log = cohort(run)
    eval_window = EvalWindow.parse(a.eval_window)
    names = a.models.split(",")
    plan = make_folds(log.installs["player_id"], a.cv, run.seed)
    per_window = {}
    for window in _window_names(a.feature_window):
        per_window[window] = _benchmark_window(run, log, window, eval_window, names, plan)[2]
    table = model_table(per_window)
    table.insert(1, "eval_window", eval_window.label)
    run.csv(table, "table3.csv")
    folds, preds, rocs = _prediction_frames(per_window)
    run.csv(folds, "folds.csv")
    run.csv(preds, "predictions.csv")
    run.csv(rocs, "roc.csv")
    body = [
        "# Cross-validated model comparison",
        "",
        f"Players: {len(log.installs)}; folds: {a.cv}; seed: {run.seed}; manifest: {manifest_name('evaluate')}",
        "",
        markdown_table(table),
        "",
    ]
    run.text("\n".join(body), "summary.md")


def cmd_heuristic(run: Run) -> int:
    a = run.args
    log = cohort(run)
    window = FeatureWindow.parse(a.feature_window)
    eval_window = EvalWindow.parse(a.eval_window)
    frame = labelled_frame(log, window, eval_window)
    data = encode(frame, frame, target="target")
    tree = train_rule_tree(data, a.max_rules, a.min_leaf)
    doc = export_rules(tree)
    rules_path = run.path(a.export)
    rules_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    run.text(dumps(tree) + "\n", "tree_model.json")
    # verify the exported document against the in-memory tree
    reread = RuleSet.from_document(rules_path.read_text(encoding="utf-8"))
    doc_classes, _ = reread.classify(frame)
    tree_classes, _ = predict(tree, data)
    mismatches = int(np.sum(doc_classes != tree_classes))
    run.notes["roundtrip_mismatches"] = mismatches
    run.text("\n".join(doc["text"]) + "\n", "rules.txt")
    if a.cv and a.cv >= 2:
        plan = make_folds(frame["player_id"], a.cv, run.seed)
        spec = ModelSpec("tree", {"max_rules": a.max_rules, "min_leaf": a.min_leaf})
        res = benchmark(frame, {"tree": spec}, plan, target="target", ensemble=False)["tree"]
        run.csv(heuristic_table([(window.label, eval_window.label, res.pooled)]), "heuristic.csv")
    for line in doc["text"]:
        print(line)
    if mismatches:
        print(f"rule export mismatch on {mismatches} rows", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def cmd_robustness(run: Run) -> None:
    a = run.args
    log = cohort(run)
    frame = labelled_frame(log, FeatureWindow.parse(a.feature_window), EvalWindow.parse(a.eval_window))
    data = encode(frame, frame, target="target")
    rep = robustness_study(
        data, {"max_rules": a.max_rules, "min_leaf": a.min_leaf}, a.chunks, a.max_level, run.seed, a.rotate
    )
    run.csv(robustness_table(rep), "table2.csv")
    rates = pd.DataFrame(rep.rates, index=rep.levels).reset_index().rename(columns={"index": "level"})
    run.csv(rates, "robustness_rates.csv")


def _heuristic_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for item in text.split(","):
        if "@" not in item:
            raise ValidationFailure(f"heuristic pair {item!r} is not WINDOW@START:END")
        w, e = item.strip().split("@", 1)
        try:
            FeatureWindow.parse(w)
            EvalWindow.parse(e)
        except ValueError as exc:
            raise ValidationFailure(f"heuristic pair {item!r}: {exc}") from exc
        pairs.append((w, e))
    return pairs


def cmd_report(run: Run) -> None:
    a = run.args
    raw = load_log(run)
    log = apply_cohort_filter(raw)
    if len(log.installs) == 0:
        raise ValidationFailure("no players pass the cohort filter")
    summary = cohort_summary(raw)
    series = summary.series_frame()
    run.csv(summary.funnel_frame(), "funnel.csv")
    run.csv(series, "active_players.csv")
    run.text(line_chart({"active players": (series["relative_day"], series["active_players"])},
                        "Active players by relative day", "relative day", "players"), "active_players.svg")
    run.text(line_chart({"rounds": (series["relative_day"], series["mean_rounds_per_active_player"])},
                        "Rounds per active player", "relative day", "rounds"), "rounds_per_player.svg")
    plan = make_folds(log.installs["player_id"], a.cv, run.seed)
    tree_spec = ModelSpec("tree", {"max_rules": a.max_rules, "min_leaf": a.min_leaf})

    rows = []
    for w, e in _heuristic_pairs(a.heuristic_pairs):
        frame = labelled_frame(log, FeatureWindow.parse(w), EvalWindow.parse(e))
        res = benchmark(frame, {"tree": tree_spec}, plan, target="target", ensemble=False)["tree"]
        rows.append((FeatureWindow.parse(w).label, EvalWindow.parse(e).label, res.pooled))
    table1 = heuristic_table(rows)
    run.csv(table1, "table1.csv")

    names = a.models.split(",")
    if "tree" not in names:
        names = ["tree"] + names
    per_window, frames, specs_by_window = {}, {}, {}
    for window in _window_names(a.windows):
        frame, specs, results = _benchmark_window(run, log, window, SHORT_TERM, names, plan)
        per_window[window], frames[window], specs_by_window[window] = results, frame, specs
    table3 = model_table(per_window)
    run.csv(table3, "table3.csv")
    _, _, rocs = _prediction_frames(per_window)
    run.csv(rocs, "roc.csv")
    last = list(per_window)[-1]
    run.text(line_chart({n: (r["fpr"], r["tpr"]) for n, r in rocs[rocs.feature_window == last].groupby("model", sort=False)},
                        f"ROC, {last} window", "false positive rate", "true positive rate"), "roc.svg")

    rob_frame = labelled_frame(log, FeatureWindow.parse(a.robustness_window), SHORT_TERM)
    rob = robustness_study(encode(rob_frame, rob_frame, target="target"),
                           {"max_rules": a.max_rules, "min_leaf": a.min_leaf}, 10, 9, run.seed)
    table2 = robustness_table(rob)
    run.csv(table2, "table2.csv")

    md_feat = []
    for window, frame in frames.items():
        data = encode(frame, frame, target="target")
        lr_terms = specs_by_window[window].get("lr", ModelSpec("lr")).params.get("terms")
        lr = train_logistic(data, terms=None if lr_terms is None else [tuple(t) for t in lr_terms])
        rf = train_forest(data, a.rf_trees, a.rf_mtry, run.seed, min_leaf=a.rf_min_leaf, n_jobs=threads(run))
        fr = feature_report(window, frame, "target", lr, rf)
        run.csv(fr.correlations, f"correlations_{window}.csv")
        run.csv(fr.coefficients, f"coefficients_{window}.csv")
        run.csv(fr.importances, f"importance_{window}.csv")
        run.text(bar_chart(list(fr.importances["column"]), fr.importances["importance"],
                           f"Forest importance, {window} window", "mean Gini decrease"), f"importance_{window}.svg")
        md_feat += [f"### {window}", "", markdown_table(fr.importances.head(8)), ""]

    preds = {}
    for window, results in per_window.items():
        for name, res in results.items():
            preds[f"{window}/{name}"] = res.predictions.set_index("player_id")["class"]
    lt = longterm_analysis(log, preds, LONG_TERM, SHORT_TERM).frame()
    run.csv(lt, "longterm.csv")

    body = [
        "# Retention prediction report",
        "",
        f"Players after cohort filter: {len(log.installs)} of {len(raw.installs)} installs; "
        f"folds: {a.cv}; seed: {run.seed}; manifest: {manifest_name('report')}",
        "",
        "## Heuristic trees", "", markdown_table(table1), "",
        "## Models", "", markdown_table(table3), "",
        "## Robustness of the heuristic", "", markdown_table(table2), "",
        "## Feature importance", "", *md_feat,
        "## Long-term retention", "", markdown_table(lt), "",
    ]
    run.text("\n".join(body), "report.md")


HANDLERS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "tune": cmd_tune,
    "evaluate": cmd_evaluate,
    "heuristic": cmd_heuristic,
    "robustness": cmd_robustness,
    "report": cmd_report,
}


def _parameters(args: argparse.Namespace, seed: int) -> dict:
    params = {k: v for k, v in vars(args).items() if k not in ("config", "threads")}
    params["seed"] = seed
    return params


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        args = _apply_config(argv, parser, subs)
        seed = resolve_seed(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except ValidationFailure as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.command == "synth":
        out_dir = Path(args.out).parent
    else:
        out_dir = Path(args.out_dir)
    started = _stamp()
    ctx = Run(args=args, out_dir=out_dir, seed=seed)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        code = HANDLERS[args.command](ctx) or EXIT_OK
    except VALIDATION_ERRORS as exc:
        print(f"{PROG} {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FoldError as exc:
        if isinstance(exc.cause, VALIDATION_ERRORS):
            print(f"{PROG} {args.command}: {exc}", file=sys.stderr)
            return EXIT_INVALID
        traceback.print_exc()
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL
    manifest = RunManifest(
        subcommand=args.command,
        parameters=_parameters(args, seed),
        seed=seed,
        inputs={str(p): digest_tree(p) for p in ctx.inputs},
        outputs={str(p.relative_to(out_dir)) if p.is_relative_to(out_dir) else str(p): digest(p)
                 for p in sorted(set(ctx.outputs))},
        started=started,
        finished=_stamp(),
        notes=ctx.notes,
    )
    manifest.write(out_dir / manifest_name(args.command))
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
