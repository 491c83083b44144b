from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from retain.featurize import EvalWindow, FeatureWindow, compute_features, label
from retain.synthcohort import (
    ARCHETYPES,
    CalibrationError,
    GeneratorConfig,
    calibrate,
    draw_latent,
    generate,
    simulated_rates,
    truth_path,
)
from retain.telemetry import DAY, apply_cohort_filter, cohort_summary, parse_lines


def test_certain_churn_on_day_one_leaves_only_day_zero() -> None:
    cfg = GeneratorConfig(n_players=1, seed=0, hazard_scale=1e9, late_hazard_scale=1e9, never_open_rate=1e-9)
    out = generate(cfg)
    log = parse_lines(out.lines)
    assert log.counts[0] == 1
    assert log.rejected == ()
    t0 = int(log.installs["install_ts"].iloc[0])
    days = (log.sessions["start_ts"].to_numpy() - t0) // DAY
    assert len(days) >= 1 and (days == 0).all()
    # churn_day is the last live day
    assert out.truth[0]["churn_day"] == 0


def test_same_seed_gives_identical_stream() -> None:
    a = generate(GeneratorConfig(n_players=300, seed=9)).lines
    b = generate(GeneratorConfig(n_players=300, seed=9)).lines
    c = generate(GeneratorConfig(n_players=300, seed=10)).lines
    assert a == b
    assert a != c


def test_clean_output_passes_validation(synth_small) -> None:
    assert parse_lines(synth_small.lines).rejected == ()
    assert synth_small.corrupted == {}


def test_sidecar_records_truth(tmp_path) -> None:
    out = generate(GeneratorConfig(n_players=200, seed=2, corruption_rate=0.01))
    path = tmp_path / "ev.jsonl"
    out.write(path)
    assert path.read_text().splitlines() == out.lines
    recs = [json.loads(ln) for ln in truth_path(path).read_text().splitlines()]
    players = [r for r in recs if r["kind"] == "player"]
    corrupted = [r for r in recs if r["kind"] == "corrupted"]
    assert len(players) == 200
    assert {r["archetype"] for r in players} <= set(ARCHETYPES)
    assert {(r["line_no"], r["reason"]) for r in corrupted} == set(out.corrupted.items())
    assert truth_path(path).name == "ev.jsonl.truth.jsonl"


def test_early_churners_are_not_short_term_retained(synth_small) -> None:
    log = parse_lines(synth_small.lines)
    short = label(log, EvalWindow(8, 14))
    early = [r["player_id"] for r in synth_small.truth if r["churn_day"] is not None and r["churn_day"] < 8]
    assert len(early) > 100
    assert (short.loc[early] == 0).all()


def test_planted_absence_signal(cohort_small) -> None:
    f = compute_features(cohort_small, FeatureWindow.first_day())
    y = label(cohort_small, EvalWindow(8, 14)).loc[f["player_id"]].to_numpy()
    away = f["current_absence_time"].to_numpy() > 20 * 3600
    assert y.mean() - y[away].mean() >= 0.15


def test_active_player_curve_decreases_in_expectation() -> None:
    cfg = GeneratorConfig()
    lat = draw_latent(cfg, 20_000, 1)
    days = np.arange(cfg.horizon_days)
    scale = np.where(days < 14, cfg.hazard_scale, cfg.late_hazard_scale)
    h = np.clip(lat.base_hazard * scale, 0, 1)
    surv = np.cumprod(1 - h, axis=1)
    rate = np.array([cfg.archetypes[a].sessions_per_day for a in ARCHETYPES])[lat.archetype] * lat.engagement
    expected = (lat.opened[:, None] * surv * (1 - np.exp(-rate))[:, None]).sum(axis=0)
    expected[0] = lat.opened.sum()
    assert (np.diff(expected[:15]) < 0).all()


def test_observed_active_players_fall_steeply() -> None:
    s = cohort_summary(parse_lines(generate(GeneratorConfig(n_players=4000, seed=8)).lines))
    a = s.active_players
    assert a[0] > a[1] > a[7] > a[14] > a[60]
    assert a[1] < 0.6 * a[0]


# -- calibration -------------------------------------------------------------------


def test_default_config_is_already_calibrated() -> None:
    cfg = GeneratorConfig()
    assert calibrate(cfg) is cfg


def test_raising_hazard_lowers_retention() -> None:
    lat = draw_latent(GeneratorConfig(), 20_000, 5)
    lo = simulated_rates(GeneratorConfig(hazard_scale=1.0, late_hazard_scale=1.0), latent=lat)
    hi = simulated_rates(GeneratorConfig(hazard_scale=1.2, late_hazard_scale=1.2), latent=lat)
    assert hi[0] < lo[0] and hi[1] < lo[1]


def test_calibration_from_uncalibrated_start_meets_targets() -> None:
    cfg = calibrate(GeneratorConfig(hazard_scale=2.0, late_hazard_scale=0.5))
    assert cfg.hazard_scale != 2.0
    short, long = simulated_rates(cfg, 50_000, seed=99)
    assert abs(short - 0.405) <= 0.015
    assert abs(long - 0.152) <= 0.02


def test_calibration_is_deterministic() -> None:
    start = GeneratorConfig(hazard_scale=1.5)
    assert calibrate(start) == calibrate(start)


def test_infeasible_targets_fail_before_emission() -> None:
    bad = GeneratorConfig(target_short_retention=0.2, target_long_retention=0.3)
    with pytest.raises(CalibrationError):
        calibrate(bad)
    with pytest.raises(CalibrationError):
        generate(replace(bad, n_players=10))


def test_unreachable_target_names_the_limit() -> None:
    cfg = GeneratorConfig(target_short_retention=0.99, target_long_retention=0.5)
    with pytest.raises(CalibrationError, match="maximum attainable"):
        calibrate(cfg, n_players=5000)


def test_non_convergence_reports_bracket() -> None:
    cfg = GeneratorConfig(hazard_scale=3.0)
    with pytest.raises(CalibrationError, match="bracket"):
        calibrate(cfg, tolerance=1e-9, n_players=5000, max_iter=3)


@pytest.mark.parametrize("field, value", [
    ("target_short_retention", 1.2), ("target_long_retention", 0.0), ("n_players", 0), ("corruption_rate", 1.0),
])
def test_invalid_config_is_rejected(field: str, value) -> None:
    with pytest.raises(ValueError):
        GeneratorConfig(**{field: value})


def test_cohort_keeps_generated_long_horizon(cohort_small) -> None:
    kept = apply_cohort_filter(cohort_small)
    assert kept.same_events(cohort_small)
    span = (kept.rounds["start_ts"].max() - kept.installs["install_ts"].min()) / DAY
    assert span >= 67
