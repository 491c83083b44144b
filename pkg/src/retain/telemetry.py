"""Raw event data model, parsing/validation and cohort restrictions.

Event logs arrive either as JSON lines (one object per line, with a ``type``
field of ``install``, ``session`` or ``round``) or as three CSV files
(``installs.csv``, ``sessions.csv``, ``rounds.csv``). Parsing never drops a
record silently: anything that breaks an invariant ends up in
``EventLog.rejected`` together with a reason code.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping

import numpy as np
import orjson
import pandas as pd

DAY = 86400

DEVICE_TYPES = ("phone", "tablet", "other")

INSTALL_COLUMNS = ["player_id", "install_ts", "device_type", "country", "acquired"]
SESSION_COLUMNS = ["player_id", "session_id", "start_ts", "end_ts"]
ROUND_COLUMNS = [
    "player_id",
    "session_id",
    "start_ts",
    "duration",
    "moves",
    "stars",
    "level",
    "friends_connected",
    "interactions",
]

# reason codes written to the rejected sidecar
MALFORMED = "MALFORMED"
UNKNOWN_TYPE = "UNKNOWN_TYPE"
MISSING_FIELD = "MISSING_FIELD"
INVALID_FIELD = "INVALID_FIELD"
INSTALL_OUT_OF_PERIOD = "INSTALL_OUT_OF_PERIOD"
DUPLICATE_INSTALL = "DUPLICATE_INSTALL"
UNKNOWN_PLAYER = "UNKNOWN_PLAYER"
END_BEFORE_START = "END_BEFORE_START"
SESSION_BEFORE_INSTALL = "SESSION_BEFORE_INSTALL"
DUPLICATE_SESSION = "DUPLICATE_SESSION"
UNKNOWN_SESSION = "UNKNOWN_SESSION"
ROUND_OUTSIDE_SESSION = "ROUND_OUTSIDE_SESSION"

COHORT_FIRST_SESSION_LIMIT = 7 * DAY


class SchemaError(ValueError):
    """Fatal problem with the layout of an input (e.g. a bad CSV header)."""


class RecordError(ValueError):
    def __init__(self, reason: str, detail: str = "") -> None:
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class Rejected:
    line_no: int
    reason: str
    raw: str
    source: str = ""

    def to_dict(self) -> dict:
        out = {"line_no": self.line_no, "reason": self.reason, "raw": self.raw}
        if self.source:
            out["source"] = self.source
        return out


@dataclass(frozen=True)
class EventLog:
    """Validated install/session/round tables.

    ``sessions`` and ``rounds`` are sorted by ``(player_id, start_ts)``;
    ``installs`` by ``player_id``. Treat the frames as read-only.
    """

    installs: pd.DataFrame
    sessions: pd.DataFrame
    rounds: pd.DataFrame
    rejected: tuple[Rejected, ...] = field(default=())

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.installs), len(self.sessions), len(self.rounds)

    @property
    def player_ids(self) -> np.ndarray:
        return self.installs["player_id"].to_numpy()

    def same_events(self, other: EventLog) -> bool:
        """True when both logs hold identical records (``rejected`` ignored)."""
        return all(
            a.reset_index(drop=True).equals(b.reset_index(drop=True))
            for a, b in (
                (self.installs, other.installs),
                (self.sessions, other.sessions),
                (self.rounds, other.rounds),
            )
        )

    def restrict(self, players: Iterable[str]) -> EventLog:
        keep = set(players)
        return EventLog(
            installs=_take(self.installs, self.installs["player_id"].isin(keep)),
            sessions=_take(self.sessions, self.sessions["player_id"].isin(keep)),
            rounds=_take(self.rounds, self.rounds["player_id"].isin(keep)),
            rejected=self.rejected,
        )


def _take(frame: pd.DataFrame, mask) -> pd.DataFrame:
    return frame.loc[np.asarray(mask)].reset_index(drop=True)


def empty_log() -> EventLog:
    return EventLog(
        installs=_frame([], "install"),
        sessions=_frame([], "session"),
        rounds=_frame([], "round"),
    )


# -- record coercion ----------------------------------------------------------


def _need(rec: Mapping, name: str):
    if name not in rec or rec[name] is None or rec[name] == "":
        raise RecordError(MISSING_FIELD, name)
    return rec[name]


def _as_int(rec: Mapping, name: str, lo: int | None = None, hi: int | None = None) -> int:
    value = _need(rec, name)
    if isinstance(value, bool):
        raise RecordError(INVALID_FIELD, name)
    if isinstance(value, str):
        try:
            value = float(value) if any(c in value for c in ".eE") else int(value)
        except ValueError:
            raise RecordError(INVALID_FIELD, name) from None
    if isinstance(value, float):
        if not math.isfinite(value) or value != int(value):
            raise RecordError(INVALID_FIELD, name)
        value = int(value)
    if not isinstance(value, int):
        raise RecordError(INVALID_FIELD, name)
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        raise RecordError(INVALID_FIELD, name)
    return value


def _as_float(rec: Mapping, name: str, lo: float | None = None) -> float:
    value = _need(rec, name)
    if isinstance(value, bool):
        raise RecordError(INVALID_FIELD, name)
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise RecordError(INVALID_FIELD, name) from None
    if not math.isfinite(value) or (lo is not None and value < lo):
        raise RecordError(INVALID_FIELD, name)
    return value


def _as_str(rec: Mapping, name: str) -> str:
    value = _need(rec, name)
    if not isinstance(value, (str, int)) or isinstance(value, bool):
        raise RecordError(INVALID_FIELD, name)
    return str(value)


def _as_bool(rec: Mapping, name: str) -> bool:
    value = _need(rec, name)
    if isinstance(value, bool):
        return value
    if value in (0, 1):
        return bool(value)
    if isinstance(value, str) and value.lower() in ("true", "false", "0", "1"):
        return value.lower() in ("true", "1")
    raise RecordError(INVALID_FIELD, name)


def _coerce_install(rec: Mapping) -> tuple:
    device = _as_str(rec, "device_type")
    if device not in DEVICE_TYPES:
        raise RecordError(INVALID_FIELD, "device_type")
    country = _as_str(rec, "country")
    if len(country) != 2 or not country.isalpha() or not country.isupper():
        raise RecordError(INVALID_FIELD, "country")
    return (
        _as_str(rec, "player_id"),
        _as_int(rec, "install_ts"),
        device,
        country,
        _as_bool(rec, "acquired"),
    )


def _coerce_session(rec: Mapping) -> tuple:
    out = (
        _as_str(rec, "player_id"),
        _as_str(rec, "session_id"),
        _as_int(rec, "start_ts"),
        _as_int(rec, "end_ts"),
    )
    if out[3] < out[2]:
        raise RecordError(END_BEFORE_START)
    return out


def _coerce_round(rec: Mapping) -> tuple:
    return (
        _as_str(rec, "player_id"),
        _as_str(rec, "session_id"),
        _as_int(rec, "start_ts"),
        _as_float(rec, "duration", lo=0.0),
        _as_int(rec, "moves", lo=0),
        _as_int(rec, "stars", lo=0, hi=3),
        _as_int(rec, "level", lo=1),
        _as_int(rec, "friends_connected", lo=0),
        _as_int(rec, "interactions", lo=0),
    )


def _fast_session(rec: Mapping) -> tuple | None:
    try:
        out = (rec["player_id"], rec["session_id"], rec["start_ts"], rec["end_ts"])
    except KeyError:
        return None
    if (
        type(out[0]) is str and out[0] and type(out[1]) is str and out[1]
        and type(out[2]) is int and type(out[3]) is int and out[3] >= out[2]
    ):
        return out
    return None


def _fast_round(rec: Mapping) -> tuple | None:
    try:
        pid, sid, start, dur = rec["player_id"], rec["session_id"], rec["start_ts"], rec["duration"]
        moves, stars, level = rec["moves"], rec["stars"], rec["level"]
        friends, inter = rec["friends_connected"], rec["interactions"]
    except KeyError:
        return None
    if (
        type(pid) is str and pid and type(sid) is str and sid and type(start) is int
        and (type(dur) is int or (type(dur) is float and math.isfinite(dur))) and dur >= 0
        and type(moves) is int and moves >= 0 and type(stars) is int and 0 <= stars <= 3
        and type(level) is int and level >= 1 and type(friends) is int and friends >= 0
        and type(inter) is int and inter >= 0
    ):
        return (pid, sid, start, float(dur), moves, stars, level, friends, inter)
    return None


_COERCE = {"install": _coerce_install, "session": _coerce_session, "round": _coerce_round}
_FAST = {"session": _fast_session, "round": _fast_round}
_COLUMNS = {"install": INSTALL_COLUMNS, "session": SESSION_COLUMNS, "round": ROUND_COLUMNS}
_DTYPES = {
    "player_id": object,
    "session_id": object,
    "install_ts": np.int64,
    "device_type": object,
    "country": object,
    "acquired": bool,
    "start_ts": np.int64,
    "end_ts": np.int64,
    "duration": np.float64,
    "moves": np.int64,
    "stars": np.int64,
    "level": np.int64,
    "friends_connected": np.int64,
    "interactions": np.int64,
}


def _frame(rows: list[tuple], kind: str) -> pd.DataFrame:
    cols = _COLUMNS[kind]
    if not rows:
        return pd.DataFrame({c: pd.Series([], dtype=_DTYPES[c]) for c in cols})
    data = list(zip(*rows))
    return pd.DataFrame({c: np.asarray(data[i], dtype=_DTYPES[c]) for i, c in enumerate(cols)})


# -- parsing ------------------------------------------------------------------


class _Collector:
    """Accumulates coerced records plus their provenance."""

    def __init__(self) -> None:
        self.rows: dict[str, list[tuple]] = {k: [] for k in _COERCE}
        self.lines: dict[str, list[tuple[int, str, str]]] = {k: [] for k in _COERCE}
        self.rejected: list[Rejected] = []

    def add(self, kind: str, rec: Mapping, line_no: int, raw: str, source: str = "") -> None:
        fast = _FAST.get(kind)
        row = fast(rec) if fast is not None else None
        if row is None:
            try:
                row = _COERCE[kind](rec)
            except RecordError as exc:
                self.rejected.append(Rejected(line_no, exc.reason, raw, source))
                return
        self.rows[kind].append(row)
        self.lines[kind].append((line_no, raw, source))

    def reject(self, line_no: int, reason: str, raw: str, source: str = "") -> None:
        self.rejected.append(Rejected(line_no, reason, raw, source))


def parse_events(
    source,
    format: str = "jsonl",
    study_period: tuple[int, int] | None = None,
) -> EventLog:
    """Parse and validate an event log.

    ``source`` is a binary stream (or path) for ``jsonl``; for ``csv`` it is a
    directory path or a mapping ``{"installs": stream, "sessions": ...,
    "rounds": ...}``. ``study_period`` optionally bounds ``install_ts`` as a
    half-open ``[start, end)`` interval.
    """
    collector = _Collector()
    if format == "jsonl":
        _read_jsonl(source, collector)
    elif format == "csv":
        _read_csv(source, collector)
    else:
        raise SchemaError(f"unknown format {format!r}")
    return _validate(collector, study_period)


def parse_lines(lines: Iterable[str], study_period: tuple[int, int] | None = None) -> EventLog:
    """Validate already-decoded JSON lines (line numbers start at 1)."""
    collector = _Collector()
    _collect_jsonl(lines, collector)
    return _validate(collector, study_period)


def _open_binary(source) -> IO[bytes]:
    if isinstance(source, (str, Path)):
        return open(source, "rb")
    return source


def _decoded_lines(stream: IO[bytes]) -> Iterable[str]:
    try:
        text = io.TextIOWrapper(stream, encoding="utf-8", newline="")
        for line in text:
            yield line.rstrip("\r\n")
    except UnicodeDecodeError as exc:
        raise OSError(f"event stream is not valid UTF-8: {exc}") from exc


def _read_jsonl(source, collector: _Collector) -> None:
    stream = _open_binary(source)
    try:
        _collect_jsonl(_decoded_lines(stream), collector)
    finally:
        if stream is not source:
            stream.close()


def _collect_jsonl(lines: Iterable[str], collector: _Collector) -> None:
    for line_no, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            rec = orjson.loads(raw)
        except orjson.JSONDecodeError:
            collector.reject(line_no, MALFORMED, raw)
            continue
        if not isinstance(rec, dict):
            collector.reject(line_no, MALFORMED, raw)
            continue
        kind = rec.get("type")
        if kind not in _COERCE:
            collector.reject(line_no, UNKNOWN_TYPE, raw)
            continue
        collector.add(kind, rec, line_no, raw)


_CSV_FILES = {"install": "installs.csv", "session": "sessions.csv", "round": "rounds.csv"}


def _read_csv(source, collector: _Collector) -> None:
    for kind, filename in _CSV_FILES.items():
        if isinstance(source, Mapping):
            stream = source[filename.removesuffix(".csv")]
            owned = False
        else:
            stream = open(Path(source) / filename, "rb")
            owned = True
        try:
            lines = _decoded_lines(stream)
            header = next(lines, None)
            if header is None or next(csv.reader([header])) != _COLUMNS[kind]:
                raise SchemaError(f"{filename}: header must be {','.join(_COLUMNS[kind])}")
            for line_no, raw in enumerate(lines, start=2):
                if not raw.strip():
                    continue
                values = next(csv.reader([raw]))
                if len(values) != len(_COLUMNS[kind]):
                    collector.reject(line_no, MALFORMED, raw, filename)
                    continue
                collector.add(kind, dict(zip(_COLUMNS[kind], values)), line_no, raw, filename)
        finally:
            if owned:
                stream.close()


def _validate(collector: _Collector, study_period: tuple[int, int] | None) -> EventLog:
    rejected = list(collector.rejected)

    def split(kind: str, bad: dict[int, str]) -> list[int]:
        keep = []
        for pos, (line_no, raw, source) in enumerate(collector.lines[kind]):
            if pos in bad:
                rejected.append(Rejected(line_no, bad[pos], raw, source))
            else:
                keep.append(pos)
        return keep

    # installs: period bound, then first-wins uniqueness
    bad: dict[int, str] = {}
    seen: dict[str, int] = {}
    for pos, row in enumerate(collector.rows["install"]):
        pid, ts = row[0], row[1]
        if study_period is not None and not (study_period[0] <= ts < study_period[1]):
            bad[pos] = INSTALL_OUT_OF_PERIOD
        elif pid in seen:
            bad[pos] = DUPLICATE_INSTALL
        else:
            seen[pid] = ts
    keep = split("install", bad)
    install_ts = seen
    installs = [collector.rows["install"][i] for i in keep]

    bad = {}
    session_span: dict[tuple[str, str], tuple[int, int]] = {}
    for pos, (pid, sid, start, end) in enumerate(collector.rows["session"]):
        if pid not in install_ts:
            bad[pos] = UNKNOWN_PLAYER
        elif start < install_ts[pid]:
            bad[pos] = SESSION_BEFORE_INSTALL
        elif (pid, sid) in session_span:
            bad[pos] = DUPLICATE_SESSION
        else:
            session_span[(pid, sid)] = (start, end)
    keep = split("session", bad)
    sessions = [collector.rows["session"][i] for i in keep]
    session_lines = [collector.lines["session"][i][0] for i in keep]

    bad = {}
    for pos, row in enumerate(collector.rows["round"]):
        pid, sid, start = row[0], row[1], row[2]
        if pid not in install_ts:
            bad[pos] = UNKNOWN_PLAYER
        elif (pid, sid) not in session_span:
            bad[pos] = UNKNOWN_SESSION
        else:
            lo, hi = session_span[(pid, sid)]
            if not lo <= start <= hi:
                bad[pos] = ROUND_OUTSIDE_SESSION
    keep = split("round", bad)
    rounds = [collector.rows["round"][i] for i in keep]
    round_lines = [collector.lines["round"][i][0] for i in keep]

    rejected.sort(key=lambda r: (r.source, r.line_no))
    return EventLog(
        installs=_sorted(_frame(installs, "install"), ["player_id"]),
        sessions=_sorted(_frame(sessions, "session"), ["player_id", "start_ts"], session_lines),
        rounds=_sorted(_frame(rounds, "round"), ["player_id", "start_ts"], round_lines),
        rejected=tuple(rejected),
    )


def _sorted(frame: pd.DataFrame, keys: list[str], order: list[int] | None = None) -> pd.DataFrame:
    if frame.empty:
        return frame
    frame = frame.assign(_order=order if order is not None else np.arange(len(frame)))
    frame = frame.sort_values(keys + ["_order"], kind="mergesort")
    return frame.drop(columns="_order").reset_index(drop=True)


# -- serialization ------------------------------------------------------------


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    return value


def iter_jsonl(log: EventLog) -> Iterable[str]:
    """Yield JSON lines: per player, the install then sessions and rounds."""
    frames = {
        "install": log.installs,
        "session": log.sessions,
        "round": log.rounds,
    }
    grouped = {}
    for kind, frame in frames.items():
        cols = _COLUMNS[kind]
        records = frame[cols].itertuples(index=False, name=None)
        by_player: dict[str, list[tuple]] = {}
        for rec in records:
            by_player.setdefault(rec[0], []).append(rec)
        grouped[kind] = by_player
    for pid in log.installs["player_id"]:
        for kind in ("install", "session", "round"):
            for rec in grouped[kind].get(pid, ()):
                obj = {"type": kind}
                obj.update({c: _jsonable(v) for c, v in zip(_COLUMNS[kind], rec)})
                yield json.dumps(obj, separators=(",", ":"))


def write_jsonl(log: EventLog, target) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8", newline="\n") as fh:
            write_jsonl(log, fh)
        return
    for line in iter_jsonl(log):
        target.write(line + "\n")


def write_csv(log: EventLog, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for kind, frame in (("install", log.installs), ("session", log.sessions), ("round", log.rounds)):
        out = frame[_COLUMNS[kind]].copy()
        if "acquired" in out:
            out["acquired"] = out["acquired"].map({True: "true", False: "false"})
        out.to_csv(directory / _CSV_FILES[kind], index=False, lineterminator="\n")


def write_rejected(log: EventLog, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in log.rejected:
            fh.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")


# -- cohort -------------------------------------------------------------------


def first_sessions(log: EventLog) -> pd.DataFrame:
    """Chronologically first session per player (player_id, session_id, start_ts, end_ts)."""
    return log.sessions.drop_duplicates("player_id", keep="first").reset_index(drop=True)


def eligible_players(log: EventLog) -> np.ndarray:
    first = first_sessions(log).merge(log.installs[["player_id", "install_ts"]], on="player_id")
    early = first[first["start_ts"] - first["install_ts"] < COHORT_FIRST_SESSION_LIMIT]
    played = log.rounds[["player_id", "session_id"]].drop_duplicates()
    ok = early.merge(played, on=["player_id", "session_id"])
    return np.sort(ok["player_id"].to_numpy())


def apply_cohort_filter(log: EventLog) -> EventLog:
    """Keep players with a session in their first 7 days whose first session had a round."""
    return log.restrict(eligible_players(log))


@dataclass
class CohortSummary:
    funnel: dict[str, int]
    active_players: list[int]
    rounds_per_active: list[float]

    def series_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "relative_day": np.arange(len(self.active_players)),
                "active_players": self.active_players,
                "mean_rounds_per_active_player": self.rounds_per_active,
            }
        )

    def funnel_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"stage": list(self.funnel), "players": list(self.funnel.values())})


def relative_day(ts, install_ts) -> np.ndarray:
    return (np.asarray(ts, dtype=np.int64) - np.asarray(install_ts, dtype=np.int64)) // DAY


def cohort_summary(log: EventLog) -> CohortSummary:
    funnel = {
        "installed": len(log.installs),
        "opened": int(log.sessions["player_id"].nunique()),
        "played": int(log.rounds["player_id"].nunique()),
        "passed_filter": len(eligible_players(log)),
    }
    if log.sessions.empty:
        return CohortSummary(funnel, [], [])
    inst = log.installs.set_index("player_id")["install_ts"]
    s_day = relative_day(log.sessions["start_ts"], inst.loc[log.sessions["player_id"]].to_numpy())
    active = pd.DataFrame({"p": log.sessions["player_id"].to_numpy(), "d": s_day}).drop_duplicates()
    n_days = int(s_day.max()) + 1
    active_counts = np.bincount(active["d"].to_numpy(), minlength=n_days)
    r_day = relative_day(log.rounds["start_ts"], inst.loc[log.rounds["player_id"]].to_numpy())
    r_day = r_day[r_day < n_days]
    round_counts = np.bincount(r_day, minlength=n_days).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        per_active = np.where(active_counts > 0, round_counts / np.maximum(active_counts, 1), 0.0)
    return CohortSummary(funnel, active_counts.tolist(), per_active.tolist())
