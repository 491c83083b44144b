"""Seedable synthetic telemetry for a single install cohort.

Players are drawn from three latent archetypes (bouncer / casual / engaged).
Each simulated day a live player may churn with an archetype-specific hazard;
live players open a Poisson number of sessions and play a Poisson number of
rounds spread over them. The generator emits the JSONL schema understood by
:mod:`retain.telemetry` plus a ground-truth sidecar.

Simulation runs in two stages. The *latent* stage draws, for every
player-day, the churn uniform, session count and round count; labels depend
only on this stage, so :func:`calibrate` can bisect on hazard scales cheaply
with common random numbers. The *expansion* stage turns the counts into
timestamped events.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .telemetry import DAY

ARCHETYPES = ("bouncer", "casual", "engaged")
COUNTRIES = ("US", "DE", "GB", "FR", "CA", "AU", "NL", "SE")
COUNTRY_WEIGHTS = (0.40, 0.16, 0.12, 0.09, 0.08, 0.06, 0.05, 0.04)
DEVICE_WEIGHTS = {"phone": 0.74, "tablet": 0.22, "other": 0.04}

EARLY_DAYS = 14


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ArchetypeParams:
    weight: float
    hazard_early: float  # daily churn probability, days 1..13
    hazard_late: float  # daily churn probability, days >= 14
    sessions_per_day: float
    day0_extra_sessions: float
    rounds_per_session: float
    round_duration: float  # mean seconds
    skill_mean: float
    friends_mean: float


DEFAULT_ARCHETYPES = {
    "bouncer": ArchetypeParams(0.40, 0.1981, 0.2043, 0.50, 0.08, 2.7, 72.0, 0.25, 0.6),
    "casual": ArchetypeParams(0.36, 0.02525, 0.02722, 0.45, 1.60, 2.8, 75.0, 0.0, 1.0),
    "engaged": ArchetypeParams(0.24, 0.00722, 0.00818, 1.40, 2.60, 3.0, 78.0, -0.2, 1.6),
}


@dataclass(frozen=True)
class GeneratorConfig:
    n_players: int = 20000
    seed: int = 7
    target_short_retention: float = 0.405
    target_long_retention: float = 0.152
    archetypes: dict = field(default_factory=lambda: dict(DEFAULT_ARCHETYPES))
    hazard_scale: float = 1.0  # multiplies early (day < 14) hazards
    late_hazard_scale: float = 1.0  # multiplies hazards from day 14 on
    engagement_shape: float = 1.5  # gamma shape of per-player activity multiplier
    tablet_hazard: float = 1.25
    acquired_rate: float = 0.3
    acquired_hazard: float = 1.1
    skill_hazard: float = 0.15  # log-hazard slope on latent skill
    intensity_shape: float = 2.0  # gamma shape of per-player rounds-per-session multiplier
    intensity_hazard: float = 1.0  # hazard multiplier is intensity ** -intensity_hazard
    eligibility_rate: float = 0.86  # P(first session contains a round)
    never_open_rate: float = 0.001
    start_ts: int = 1399939200  # 2014-05-13T00:00:00Z
    install_spread_days: int = 7
    horizon_days: int = 68
    corruption_rate: float = 0.0
    pace_sigma: float = 1.0  # log-sd of the per-player round duration multiplier

    def __post_init__(self) -> None:
        for name in ("target_short_retention", "target_long_retention", "eligibility_rate"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not 0.0 <= self.corruption_rate < 1.0:
            raise ValueError("corruption_rate must lie in [0, 1)")
        if self.n_players < 1:
            raise ValueError("n_players must be >= 1")
        if self.horizon_days < 1:
            raise ValueError("horizon_days must be >= 1")

    def with_archetype(self, name: str, **changes) -> GeneratorConfig:
        arch = dict(self.archetypes)
        arch[name] = replace(arch[name], **changes)
        return replace(self, archetypes=arch)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["archetypes"] = {k: asdict(v) for k, v in self.archetypes.items()}
        return d


def check_feasible(config: GeneratorConfig) -> None:
    """Raise CalibrationError for targets this hazard family cannot produce."""
    if config.target_long_retention >= config.target_short_retention:
        raise CalibrationError(
            "long-term target must be below the short-term target "
            f"({config.target_long_retention} >= {config.target_short_retention})"
        )
    if config.horizon_days < 67:
        raise CalibrationError("horizon_days must cover the day-60..67 window")


# -- latent stage -------------------------------------------------------------


@dataclass
class Latent:
    archetype: np.ndarray  # index into ARCHETYPES
    device: np.ndarray
    country: np.ndarray
    acquired: np.ndarray
    skill: np.ndarray
    engagement: np.ndarray
    intensity: np.ndarray
    install_ts: np.ndarray
    opened: np.ndarray
    first_rounds: np.ndarray  # rounds in the first session
    churn_u: np.ndarray  # (n, H) uniforms
    base_hazard: np.ndarray  # (n, H) hazards before scaling
    sessions: np.ndarray  # (n, H) session counts ignoring survival; day 0 excludes the first
    rounds: np.ndarray  # (n, H) rounds outside the first session ignoring survival


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def draw_latent(config: GeneratorConfig, n_players: int | None = None, seed: int | None = None) -> Latent:
    n = config.n_players if n_players is None else n_players
    seed = config.seed if seed is None else seed
    H = config.horizon_days
    g_attr, g_churn, g_sess, g_round = _streams(seed, 4)
    params = [config.archetypes[a] for a in ARCHETYPES]

    weights = np.array([p.weight for p in params])
    arch = g_attr.choice(len(ARCHETYPES), size=n, p=weights / weights.sum())
    devices = np.array(list(DEVICE_WEIGHTS))
    dev_p = np.array(list(DEVICE_WEIGHTS.values()))
    device = g_attr.choice(len(devices), size=n, p=dev_p / dev_p.sum())
    cw = np.array(COUNTRY_WEIGHTS)
    country = g_attr.choice(len(COUNTRIES), size=n, p=cw / cw.sum())
    acquired = g_attr.random(n) < config.acquired_rate
    skill = g_attr.normal(np.array([p.skill_mean for p in params])[arch], 1.0)
    k = config.engagement_shape
    engagement = g_attr.gamma(k, 1.0 / k, size=n)
    install_ts = config.start_ts + np.sort(
        g_attr.integers(0, config.install_spread_days * DAY, size=n)
    )
    opened = g_attr.random(n) >= config.never_open_rate
    eligible = g_attr.random(n) < config.eligibility_rate
    ki = config.intensity_shape
    intensity = g_attr.gamma(ki, 1.0 / ki, size=n)
    arch_rps = np.array([p.rounds_per_session for p in params])[arch]
    rps = arch_rps * np.sqrt(engagement) * intensity
    # the first session reflects the archetype only, not individual engagement
    first_rounds = np.where(eligible, 1 + g_attr.poisson(np.maximum(arch_rps - 1.0, 0.0)), 0)

    mult = np.where(devices[device] == "tablet", config.tablet_hazard, 1.0)
    mult = mult * np.where(acquired, config.acquired_hazard, 1.0)
    mult = mult * np.exp(config.skill_hazard * skill) / np.sqrt(engagement)
    mult = mult * intensity ** -config.intensity_hazard
    days = np.arange(H)
    early = np.array([p.hazard_early for p in params])[arch]
    late = np.array([p.hazard_late for p in params])[arch]
    base_hazard = np.where(days[None, :] < EARLY_DAYS, early[:, None], late[:, None]) * mult[:, None]
    base_hazard[:, 0] = 0.0
    churn_u = g_churn.random((n, H))

    rate = np.array([p.sessions_per_day for p in params])[arch] * engagement
    rate0 = np.array([p.day0_extra_sessions for p in params])[arch] * engagement
    sessions = g_sess.poisson(np.broadcast_to(rate[:, None], (n, H)))
    sessions[:, 0] = g_sess.poisson(rate0)
    rounds = g_round.poisson(sessions * rps[:, None])

    return Latent(
        archetype=arch,
        device=devices[device],
        country=np.array(COUNTRIES)[country],
        acquired=acquired,
        skill=skill,
        engagement=engagement,
        intensity=intensity,
        install_ts=install_ts.astype(np.int64),
        opened=opened,
        first_rounds=first_rounds.astype(np.int64),
        churn_u=churn_u,
        base_hazard=base_hazard,
        sessions=sessions,
        rounds=rounds,
    )


def survival(latent: Latent, hazard_scale: float, late_scale: float) -> np.ndarray:
    """Boolean (n, H) alive mask: a player churns on the first day whose uniform falls under the hazard."""
    H = latent.churn_u.shape[1]
    scale = np.where(np.arange(H) < EARLY_DAYS, hazard_scale, late_scale)
    h = np.clip(latent.base_hazard * scale[None, :], 0.0, 1.0)
    dropped = latent.churn_u < h
    dropped[:, 0] = False
    return ~np.logical_or.accumulate(dropped, axis=1)


def latent_labels(latent: Latent, alive: np.ndarray, start_day: int, end_day: int) -> np.ndarray:
    """Any round in relative days [start_day, end_day)."""
    played = (latent.rounds > 0) & alive
    played[:, 0] |= latent.first_rounds > 0
    played &= latent.opened[:, None]
    return played[:, start_day:end_day].any(axis=1)


def simulated_rates(
    config: GeneratorConfig,
    n_players: int = 50000,
    seed: int = 20140513,
    latent: Latent | None = None,
) -> tuple[float, float]:
    """Short- and long-term retention among cohort-eligible players."""
    latent = draw_latent(config, n_players, seed) if latent is None else latent
    alive = survival(latent, config.hazard_scale, config.late_hazard_scale)
    eligible = latent.opened & (latent.first_rounds > 0)
    short = latent_labels(latent, alive, 8, 14)[eligible].mean()
    long = latent_labels(latent, alive, 60, 67)[eligible].mean()
    return float(short), float(long)


def calibrate(
    config: GeneratorConfig,
    tolerance: float = 0.003,
    n_players: int = 50000,
    seed: int = 20140513,
    max_iter: int = 100,
) -> GeneratorConfig:
    """Bisect the early hazard scale to the short-term target, then the late
    scale to the long-term target. Returns ``config`` unchanged when both
    targets are already met."""
    check_feasible(config)
    latent = draw_latent(config, n_players, seed)

    def rates(early: float, late: float) -> tuple[float, float]:
        return simulated_rates(replace(config, hazard_scale=early, late_hazard_scale=late), latent=latent)

    short, long = rates(config.hazard_scale, config.late_hazard_scale)
    if abs(short - config.target_short_retention) <= tolerance and abs(
        long - config.target_long_retention
    ) <= tolerance:
        return config

    early = _bisect(
        lambda s: rates(s, config.late_hazard_scale)[0],
        config.target_short_retention,
        config.hazard_scale,
        tolerance,
        max_iter,
        "hazard_scale",
    )
    late = _bisect(
        lambda s: rates(early, s)[1],
        config.target_long_retention,
        config.late_hazard_scale,
        tolerance,
        max_iter,
        "late_hazard_scale",
    )
    return replace(config, hazard_scale=early, late_hazard_scale=late)


def _bisect(rate_at, target: float, start: float, tol: float, max_iter: int, name: str) -> float:
    # retention is decreasing in the scale
    lo, hi = 0.0, max(start, 1e-3)
    r_lo = rate_at(lo)
    if r_lo < target - tol:
        raise CalibrationError(f"{name}: target {target} exceeds maximum attainable rate {r_lo:.4f}")
    for _ in range(60):
        if rate_at(hi) <= target:
            break
        hi *= 2.0
    else:
        raise CalibrationError(f"{name}: could not bracket target {target}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r = rate_at(mid)
        if abs(r - target) <= tol:
            return mid
        if r > target:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"{name}: no convergence after {max_iter} iterations, bracket [{lo}, {hi}]")


# -- expansion stage ----------------------------------------------------------


@dataclass
class SynthOutput:
    lines: list[str]
    truth: list[dict]
    corrupted: dict[int, str]  # line number (1-based) -> expected reason

    def write(self, path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in self.lines:
                fh.write(line + "\n")
        with open(truth_path(path), "w", encoding="utf-8", newline="\n") as fh:
            for rec in self.truth:
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            for line_no in sorted(self.corrupted):
                rec = {"kind": "corrupted", "line_no": line_no, "reason": self.corrupted[line_no]}
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def truth_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".truth.jsonl")


def _segment_cumsum(values: np.ndarray, group_start: np.ndarray) -> np.ndarray:
    """Inclusive cumulative sum restarting at each True in ``group_start``."""
    total = np.cumsum(values)
    starts = np.flatnonzero(group_start)
    offset = np.zeros_like(total)
    if len(starts):
        before = np.concatenate([[0], total[starts[1:] - 1]]) if len(starts) > 1 else np.array([0])
        seg_id = np.cumsum(group_start) - 1
        offset = before[seg_id]
    return total - offset


def generate(config: GeneratorConfig) -> SynthOutput:
    """Simulate the cohort and render JSONL event lines."""
    check_feasible(config)
    lat = draw_latent(config)
    alive = survival(lat, config.hazard_scale, config.late_hazard_scale)
    g = _streams(config.seed, 6)[5]
    n, H = alive.shape
    params = [config.archetypes[a] for a in ARCHETYPES]
    pids = np.array([f"p{i:06d}" for i in range(n)], dtype=object)

    churn_day = np.where(alive[:, -1], -1, alive.sum(axis=1) - 1)

    # sessions: the forced first session plus Poisson sessions on live days
    S = np.where(alive & lat.opened[:, None], lat.sessions, 0)
    R = np.where(S > 0, lat.rounds, 0)
    p_idx, d_idx = np.nonzero(S)
    reps = S[p_idx, d_idx]
    sess_player = np.repeat(p_idx, reps)
    sess_day = np.repeat(d_idx, reps)
    first_player = np.flatnonzero(lat.opened)
    sess_player = np.concatenate([first_player, sess_player])
    sess_day = np.concatenate([np.zeros(len(first_player), dtype=np.int64), sess_day])
    is_first = np.zeros(len(sess_player), dtype=bool)
    is_first[: len(first_player)] = True
    order = np.lexsort((~is_first, sess_day, sess_player))
    sess_player, sess_day, is_first = sess_player[order], sess_day[order], is_first[order]
    n_sess = len(sess_player)

    # rounds: first session gets first_rounds, the rest are spread uniformly
    # over the player-day's other sessions
    sess_rounds = np.zeros(n_sess, dtype=np.int64)
    sess_rounds[is_first] = lat.first_rounds[sess_player[is_first]]
    # index of the first non-first session per (player, day) block
    other = ~is_first
    key = sess_player.astype(np.int64) * H + sess_day
    other_idx = np.flatnonzero(other)
    blk_key, blk_start, blk_count = np.unique(key[other_idx], return_index=True, return_counts=True)
    blk_rounds = R.ravel()[blk_key]
    round_block = np.repeat(np.arange(len(blk_key)), blk_rounds)
    pick = (g.random(len(round_block)) * blk_count[round_block]).astype(np.int64)
    target = other_idx[blk_start[round_block] + pick]
    sess_rounds += np.bincount(target, minlength=n_sess)

    arch = lat.archetype[sess_player]
    # rounds, in session order
    r_sess = np.repeat(np.arange(n_sess), sess_rounds)
    r_player = sess_player[r_sess]
    n_rounds = len(r_sess)
    # per-player pace keeps playtime a noisier engagement proxy than round count
    pace = g.lognormal(-0.5 * config.pace_sigma**2, config.pace_sigma, size=n)
    mean_dur = np.array([p.round_duration for p in params])[lat.archetype[r_player]] * pace[r_player]
    r_dur = np.maximum(5, np.round(g.lognormal(np.log(mean_dur) - 0.18, 0.6))).astype(np.int64)
    r_gap = g.integers(3, 40, size=n_rounds)
    r_first_in_sess = np.ones(n_rounds, dtype=bool)
    r_first_in_sess[1:] = r_sess[1:] != r_sess[:-1]
    step = r_dur + r_gap
    r_offset = _segment_cumsum(step, r_first_in_sess) - r_dur  # start offset within session
    tail = g.integers(10, 180, size=n_sess)
    last = np.zeros(n_sess, dtype=np.int64)
    np.maximum.at(last, r_sess, r_offset + r_dur)
    sess_dur = last + tail

    # session start times
    inst = lat.install_ts[sess_player]
    u = g.random(n_sess)
    first_start = inst + g.integers(5, 120, size=n_sess)
    first_end = first_start + sess_dur
    # day-0 extra sessions begin after the first session ends
    first_end_player = np.zeros(n, dtype=np.int64)
    first_end_player[sess_player[is_first]] = first_end[is_first]
    day_lo = np.where(sess_day == 0, first_end_player[sess_player] + 60, inst + sess_day * DAY)
    day_hi = inst + (sess_day + 1) * DAY - sess_dur - 1
    start = np.where(is_first, first_start, day_lo + (u * np.maximum(day_hi - day_lo, 0)).astype(np.int64))
    end = start + sess_dur

    # re-sort sessions chronologically within player
    order = np.lexsort((start, sess_player))
    inv = np.empty_like(order)
    inv[order] = np.arange(n_sess)
    sess_player, start, end = sess_player[order], start[order], end[order]
    sess_rounds = sess_rounds[order]
    first_sess_of_player = np.ones(n_sess, dtype=bool)
    first_sess_of_player[1:] = sess_player[1:] != sess_player[:-1]
    sess_num = np.arange(n_sess) - np.maximum.accumulate(np.where(first_sess_of_player, np.arange(n_sess), 0))
    r_sess = inv[r_sess]
    r_order = np.lexsort((r_offset, r_sess))
    r_sess, r_offset, r_dur = r_sess[r_order], r_offset[r_order], r_dur[r_order]
    r_player = sess_player[r_sess]
    r_start = start[r_sess] + r_offset

    # gameplay detail: pass/fail drives level; stars and moves follow skill/level
    first_round_of_player = np.ones(n_rounds, dtype=bool)
    first_round_of_player[1:] = r_player[1:] != r_player[:-1]
    round_index = _segment_cumsum(np.ones(n_rounds, dtype=np.int64), first_round_of_player) - 1
    skill = lat.skill[r_player]
    p_pass = 1.0 / (1.0 + np.exp(-(0.9 + 0.8 * skill - 0.025 * round_index)))
    passed = g.random(n_rounds) < p_pass
    level = 1 + _segment_cumsum(passed.astype(np.int64), first_round_of_player) - passed
    q = 1.0 / (1.0 + np.exp(-(0.6 * skill - 0.01 * level)))
    stars = np.where(passed, 1 + g.binomial(2, q), 0)
    moves = g.poisson(np.maximum(14.0 + 0.25 * level - 2.0 * skill, 1.0)) + 1
    friends0 = g.poisson(np.array([p.friends_mean for p in params])[lat.archetype])
    friends = friends0[r_player] + round_index // 40
    interactions = g.poisson(0.04 + 0.03 * friends)

    lines, truth = _render(
        config, lat, pids, churn_day, sess_player, sess_num, start, end,
        r_player, r_sess, sess_num[r_sess], r_start, r_dur, moves, stars, level, friends, interactions,
    )
    corrupted: dict[int, str] = {}
    if config.corruption_rate > 0:
        lines, corrupted = _corrupt(lines, config.corruption_rate, _streams(config.seed + 1, 1)[0])
    return SynthOutput(lines, truth, corrupted)


def _render(config, lat, pids, churn_day, sess_player, sess_num, s_start, s_end,
            r_player, r_sess, r_sess_num, r_start, r_dur, moves, stars, level, friends, interactions):
    n = len(pids)
    s_bounds = np.searchsorted(sess_player, np.arange(n + 1))
    r_bounds = np.searchsorted(r_sess, np.searchsorted(sess_player, np.arange(n + 1)))
    s_start, s_end = s_start.tolist(), s_end.tolist()
    sess_num = sess_num.tolist()
    cols = [x.tolist() for x in (r_start, r_dur, moves, stars, level, friends, interactions)]
    r_sess_num = r_sess_num.tolist()
    lines: list[str] = []
    truth: list[dict] = []
    for i in range(n):
        pid = pids[i]
        acq = "true" if lat.acquired[i] else "false"
        lines.append(
            f'{{"type":"install","player_id":"{pid}","install_ts":{int(lat.install_ts[i])},'
            f'"device_type":"{lat.device[i]}","country":"{lat.country[i]}","acquired":{acq}}}'
        )
        rj = r_bounds[i]
        for k in range(s_bounds[i], s_bounds[i + 1]):
            lines.append(
                f'{{"type":"session","player_id":"{pid}","session_id":"s{sess_num[k]}",'
                f'"start_ts":{s_start[k]},"end_ts":{s_end[k]}}}'
            )
            while rj < r_bounds[i + 1] and r_sess_num[rj] == sess_num[k]:
                lines.append(
                    f'{{"type":"round","player_id":"{pid}","session_id":"s{sess_num[k]}",'
                    f'"start_ts":{cols[0][rj]},"duration":{cols[1][rj]},"moves":{cols[2][rj]},'
                    f'"stars":{cols[3][rj]},"level":{cols[4][rj]},"friends_connected":{cols[5][rj]},'
                    f'"interactions":{cols[6][rj]}}}'
                )
                rj += 1
        truth.append(
            {
                "kind": "player",
                "player_id": pid,
                "archetype": ARCHETYPES[lat.archetype[i]],
                "churn_day": int(churn_day[i]) if churn_day[i] >= 0 else None,
                "opened": bool(lat.opened[i]),
            }
        )
    return lines, truth


def _corrupt(lines: list[str], rate: float, g: np.random.Generator) -> tuple[list[str], dict[int, str]]:
    """Mutate some round lines and inject standalone invalid lines.

    Only rounds are mutated so that no valid record loses its parent.
    """
    n_bad = int(round(rate * len(lines)))
    round_pos = [i for i, ln in enumerate(lines) if ln.startswith('{"type":"round"')]
    n_mut = min(n_bad // 2, len(round_pos))
    n_inj = n_bad - n_mut
    mutate = set(g.choice(len(round_pos), size=n_mut, replace=False).tolist()) if n_mut else set()
    out = list(lines)
    reasons: dict[int, str] = {}
    for j in sorted(mutate):
        pos = round_pos[j]
        rec = json.loads(out[pos])
        if j % 2 == 0:
            rec["stars"] = 7
            reasons[pos] = "INVALID_FIELD"
        else:
            rec["start_ts"] += 10 * DAY
            reasons[pos] = "ROUND_OUTSIDE_SESSION"
        out[pos] = json.dumps(rec, separators=(",", ":"))
    # injected lines go after a random existing line
    inserts: list[tuple[int, str, str]] = []
    for k in range(n_inj):
        at = int(g.integers(0, len(lines) + 1))
        kind = k % 3
        if kind == 0:
            inserts.append((at, '{"type":"session","player_id":', "MALFORMED"))
        elif kind == 1:
            line = json.dumps(
                {"type": "session", "player_id": f"ghost{k}", "session_id": "s0",
                 "start_ts": 1, "end_ts": 2}, separators=(",", ":"))
            inserts.append((at, line, "UNKNOWN_PLAYER"))
        else:
            # inject for the nearest preceding install so the player exists
            j = at - 1
            while j >= 0 and not out[j].startswith('{"type":"install"'):
                j -= 1
            if j < 0:
                inserts.append((at, "not json at all", "MALFORMED"))
                continue
            inst = json.loads(out[j])
            line = json.dumps(
                {"type": "session", "player_id": inst["player_id"], "session_id": f"bad{k}",
                 "start_ts": inst["install_ts"] + 500, "end_ts": inst["install_ts"] + 100},
                separators=(",", ":"))
            inserts.append((at, line, "END_BEFORE_START"))
    inserts.sort(key=lambda t: t[0])
    final: list[str] = []
    final_reasons: dict[int, str] = {}
    ins = 0
    for pos in range(len(out) + 1):
        while ins < len(inserts) and inserts[ins][0] == pos:
            final.append(inserts[ins][1])
            final_reasons[len(final)] = inserts[ins][2]
            ins += 1
        if pos < len(out):
            final.append(out[pos])
            if pos in reasons:
                final_reasons[len(final)] = reasons[pos]
    return final, final_reasons
