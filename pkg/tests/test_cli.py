from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import pytest

from retain import cli
from retain.learners import RuleSet
from retain.synthcohort import truth_path

FAST = ["--cv", "3", "--rf-trees", "8", "--svm-max-rows", "300", "--lr-subsample", "500"]


@pytest.fixture(scope="module")
def events(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("synth") / "ev.jsonl"
    assert cli.run(["synth", "--players", "800", "--seed", "7", "--out", str(path)]) == 0
    return path


def manifest(out_dir: Path, command: str) -> cli.RunManifest:
    return cli.RunManifest.read(out_dir / cli.manifest_name(command))


def test_synth_is_deterministic(tmp_path) -> None:
    a, b = tmp_path / "a" / "ev.jsonl", tmp_path / "b" / "ev.jsonl"
    for p in (a, b):
        assert cli.run(["synth", "--players", "300", "--seed", "7", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert truth_path(a).read_bytes() == truth_path(b).read_bytes()
    assert manifest(a.parent, "synth").outputs == manifest(b.parent, "synth").outputs


def test_seed_falls_back_to_environment(tmp_path, monkeypatch) -> None:
    flag, env = tmp_path / "flag" / "ev.jsonl", tmp_path / "env" / "ev.jsonl"
    assert cli.run(["synth", "--players", "100", "--seed", "7", "--out", str(flag)]) == 0
    monkeypatch.setenv("RETAIN_SEED", "7")
    assert cli.run(["synth", "--players", "100", "--out", str(env)]) == 0
    assert flag.read_bytes() == env.read_bytes()
    assert manifest(env.parent, "synth").seed == 7
    monkeypatch.setenv("RETAIN_SEED", "seven")
    assert cli.run(["synth", "--players", "100", "--out", str(env)]) == 1


def test_config_file_sits_between_flags_and_defaults(tmp_path) -> None:
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"players": 40, "seed": 3}))
    out = tmp_path / "ev.jsonl"
    assert cli.run(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    m = manifest(tmp_path, "synth")
    assert (m.parameters["players"], m.seed) == (40, 3)
    assert cli.run(["synth", "--config", str(cfg), "--players", "50", "--out", str(out)]) == 0
    assert manifest(tmp_path, "synth").parameters["players"] == 50
    cfg.write_text(json.dumps({"no_such_flag": 1}))
    assert cli.run(["synth", "--config", str(cfg), "--out", str(out)]) == 64
    cfg.write_text("[1, 2]")
    assert cli.run(["synth", "--config", str(cfg), "--out", str(out)]) == 1


def test_usage_errors_exit_64(capsys) -> None:
    assert cli.run(["synth", "--bogus"]) == 64
    assert cli.run(["nope"]) == 64
    assert cli.run(["evaluate", "--events", "x", "--models", "boost"]) == 64
    assert "usage" in capsys.readouterr().err


def test_validation_failures_exit_1(tmp_path, events) -> None:
    assert cli.run(["ingest", "--events", str(tmp_path / "missing.jsonl"), "--out-dir", str(tmp_path)]) == 1
    assert cli.run(["tune", "--events", str(events), "--family", "svm", "--grid", "{}", "--out-dir", str(tmp_path)]) == 1


def test_internal_errors_exit_2(tmp_path, events, monkeypatch) -> None:
    def boom(run):
        raise RuntimeError("unexpected")

    monkeypatch.setitem(cli.HANDLERS, "ingest", boom)
    assert cli.run(["ingest", "--events", str(events), "--out-dir", str(tmp_path)]) == 2


def test_ingest_strict_mode(tmp_path) -> None:
    dirty = tmp_path / "dirty.jsonl"
    assert cli.run(["synth", "--players", "200", "--seed", "1", "--corruption-rate", "0.02", "--out", str(dirty)]) == 0
    out = tmp_path / "out"
    assert cli.run(["ingest", "--events", str(dirty), "--out-dir", str(out)]) == 0
    assert cli.run(["ingest", "--events", str(dirty), "--out-dir", str(out), "--strict"]) == 1
    rejected = (out / "dirty.jsonl.rejected.jsonl").read_text().splitlines()
    assert len(rejected) == manifest(out, "ingest").notes["rejected_records"] > 0


def test_evaluate_emits_all_requested_rows(tmp_path, events) -> None:
    args = ["evaluate", "--events", str(events), "--feature-window", "7d", "--eval-window", "8:14",
            "--models", "lr,svm,rf,ensemble", "--seed", "7", "--out-dir", str(tmp_path), *FAST]
    assert cli.run(args) == 0
    table = pd.read_csv(tmp_path / "table3.csv")
    assert list(table["model"]) == ["LR", "SVM", "RF", "ENSEMBLE"]
    assert set(table.columns) >= {"accuracy", "precision", "recall", "f1", "auc"}
    assert (table["eval_window"] == "8:14").all()
    assert "table3.csv" in manifest(tmp_path, "evaluate").outputs


def test_heuristic_rules_round_trip(tmp_path, events) -> None:
    args = ["heuristic", "--events", str(events), "--feature-window", "day", "--max-rules", "4",
            "--export", "rules.json", "--out-dir", str(tmp_path), "--cv", "3"]
    assert cli.run(args) == 0
    assert manifest(tmp_path, "heuristic").notes["roundtrip_mismatches"] == 0
    doc = json.loads((tmp_path / "rules.json").read_text())
    assert len(doc["rules"]) == 5
    assert len(pd.read_csv(tmp_path / "heuristic.csv")) == 1
    RuleSet.from_document(doc)


def rerun_from_manifest(m: cli.RunManifest, out_dir: Path) -> int:
    cfg = {k: v for k, v in m.parameters.items() if k not in ("command", "out_dir") and v is not None}
    path = out_dir / "replay.json"
    out_dir.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg))
    return cli.run([m.subcommand, "--config", str(path), "--out-dir", str(out_dir)])


def test_artifacts_regenerate_from_manifest(tmp_path, events) -> None:
    first = tmp_path / "first"
    assert cli.run(["featurize", "--events", str(events), "--feature-window", "3d", "--seed", "5",
                    "--out-dir", str(first)]) == 0
    m = manifest(first, "featurize")
    assert rerun_from_manifest(m, tmp_path / "again") == 0
    again = manifest(tmp_path / "again", "featurize")
    assert again.outputs == m.outputs
    assert list(again.inputs.values()) == list(m.inputs.values())


def test_outputs_stay_inside_out_dir(tmp_path, events) -> None:
    out = tmp_path / "only"
    before = set(tmp_path.rglob("*"))
    assert cli.run(["robustness", "--events", str(events), "--out-dir", str(out), "--max-level", "3"]) == 0
    created = set(tmp_path.rglob("*")) - before
    assert created and all(out == p or out in p.parents for p in created)
    assert set(manifest(out, "robustness").outputs) == {"table2.csv", "robustness_rates.csv"}


def test_version_and_help_exit_zero(capsys) -> None:
    assert cli.run(["--version"]) == 0
    assert cli.run(["report", "--help"]) == 0
    assert "--heuristic-pairs" in capsys.readouterr().out
