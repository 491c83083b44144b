from __future__ import annotations

import json

import pytest

from retain.synthcohort import GeneratorConfig, generate
from retain.telemetry import DAY, apply_cohort_filter, parse_lines

T0 = 1_400_000_000


def install(pid: str, ts: int = T0, device: str = "phone", country: str = "US", acquired: bool = False) -> str:
    return json.dumps(
        {"type": "install", "player_id": pid, "install_ts": ts, "device_type": device,
         "country": country, "acquired": acquired}
    )


def session(pid: str, sid: str, start: int, end: int) -> str:
    return json.dumps({"type": "session", "player_id": pid, "session_id": sid, "start_ts": start, "end_ts": end})


def round_(
    pid: str,
    sid: str,
    start: int,
    duration: int = 60,
    moves: int = 10,
    stars: int = 2,
    level: int = 1,
    friends: int = 0,
    interactions: int = 0,
) -> str:
    return json.dumps(
        {"type": "round", "player_id": pid, "session_id": sid, "start_ts": start, "duration": duration,
         "moves": moves, "stars": stars, "level": level, "friends_connected": friends,
         "interactions": interactions}
    )


def day(d: float) -> int:
    return int(d * DAY)


@pytest.fixture(scope="session")
def synth_small():
    """2,000 players from the default generator, seed 3."""
    return generate(GeneratorConfig(n_players=2000, seed=3))


@pytest.fixture(scope="session")
def cohort_small(synth_small):
    return apply_cohort_filter(parse_lines(synth_small.lines))


# -- acceptance reporting ----------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def record(number: int, name: str, ok: bool, detail: str) -> bool:
    """Remember one acceptance line; printed in the terminal summary."""
    ACCEPTANCE[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    return ok


def pytest_terminal_summary(terminalreporter) -> None:
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
