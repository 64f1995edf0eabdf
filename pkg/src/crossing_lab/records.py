"""Append-only JSON Lines serialization of trials and sessions.

A trial block is one header object, one object per tick, and one footer
object. A session file is a session header followed by trial blocks. Floats
serialize through repr and round-trip exactly, so a replayed trial reproduces
the file byte for byte. All times are seconds, positions meters, speeds m/s.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict
from typing import Iterable, Iterator, Optional, TextIO

from .trial import (
    SCHEMA_VERSION,
    Condition,
    EngineParams,
    FailureCause,
    HeadOrientation,
    LedState,
    OutcomeStatus,
    ParticipantMeta,
    PedInput,
    PedSnap,
    SessionPlan,
    SessionRecord,
    TickLog,
    TrialOutcome,
    TrialRecord,
    VehicleSnap,
)
from .traffic import TICK_RATE, RoadGeometry, TrafficConfig


class SchemaError(ValueError):
    """Log file does not carry the schema version this engine understands."""


def dumps_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _input_obj(inp: Optional[PedInput]) -> Optional[dict]:
    if inp is None:
        return None
    return {
        "walk": inp.walk_target,
        "head": None if inp.head_toggle is None else inp.head_toggle.value,
        "maze": inp.maze_move,
        "ts": inp.timestamp,
    }


def _input_from_obj(obj: Optional[dict]) -> Optional[PedInput]:
    if obj is None:
        return None
    return PedInput(
        walk_target=obj.get("walk"),
        head_toggle=None if obj.get("head") is None else HeadOrientation(obj["head"]),
        maze_move=obj.get("maze"),
        timestamp=obj.get("ts", 0),
    )


def tick_obj(tick: TickLog) -> dict:
    return {
        "v": SCHEMA_VERSION,
        "kind": "tick",
        "t": tick.t,
        "held": tick.held,
        "input": _input_obj(tick.inp),
        "ped": {
            "y": tick.ped.y,
            "v": tick.ped.v,
            "head": tick.ped.head,
            "maze": {"active": tick.ped.maze_active, "solved": tick.ped.mazes_solved},
        },
        "led": {"state": tick.led.mode, "phase": tick.led.phase},
        "vehicles": [
            {"id": s.id, "x": s.x, "v": s.v, "a": s.a} for s in tick.vehicles
        ],
    }


def _tick_from_obj(obj: dict) -> TickLog:
    ped = obj["ped"]
    led = obj["led"]
    return TickLog(
        t=obj["t"],
        inp=_input_from_obj(obj.get("input")),
        held=obj["held"],
        ped=PedSnap(
            y=ped["y"],
            v=ped["v"],
            head=ped["head"],
            maze_active=ped["maze"]["active"],
            mazes_solved=ped["maze"]["solved"],
        ),
        led=LedState(led["state"], led["phase"]),
        vehicles=tuple(
            VehicleSnap(v["id"], v["x"], v["v"], v["a"]) for v in obj["vehicles"]
        ),
    )


def trial_header_obj(record: TrialRecord) -> dict:
    return {
        "v": SCHEMA_VERSION,
        "kind": "trial_header",
        "trial_id": record.trial_id,
        "condition": record.condition.value,
        "seed": record.seed,
        "practice": record.practice,
        "participant": None if record.participant is None else asdict(record.participant),
        "traffic": record.config.to_dict(),
        "geometry": record.geometry.to_dict(),
        "engine": asdict(record.params),
    }


def trial_footer_obj(record: TrialRecord) -> dict:
    return {
        "v": SCHEMA_VERSION,
        "kind": "trial_footer",
        "outcome": {
            "status": record.outcome.status.value,
            "cause": None if record.outcome.cause is None else record.outcome.cause.value,
        },
        "wait_end_t": record.wait_end_t,
        "cross_end_t": record.cross_end_t,
    }


def trial_lines(record: TrialRecord) -> Iterator[str]:
    yield dumps_line(trial_header_obj(record))
    for tick in record.ticks:
        yield dumps_line(tick_obj(tick))
    yield dumps_line(trial_footer_obj(record))


def write_trial(fp: TextIO, record: TrialRecord) -> None:
    for line in trial_lines(record):
        fp.write(line)
        fp.write("\n")


def session_header_obj(session: SessionRecord) -> dict:
    return {
        "v": SCHEMA_VERSION,
        "kind": "session_header",
        "seed": session.seed,
        "plan": session.plan.to_dict(),
        "participant": None if session.participant is None else asdict(session.participant),
    }


def write_session(fp: TextIO, session: SessionRecord) -> None:
    fp.write(dumps_line(session_header_obj(session)))
    fp.write("\n")
    for trial in session.trials:
        write_trial(fp, trial)


def session_text(session: SessionRecord) -> str:
    buf = io.StringIO()
    write_session(buf, session)
    return buf.getvalue()


def _record_from_block(header: dict, ticks: list[TickLog], footer: dict) -> TrialRecord:
    outcome = TrialOutcome(
        status=OutcomeStatus(footer["outcome"]["status"]),
        cause=None
        if footer["outcome"]["cause"] is None
        else FailureCause(footer["outcome"]["cause"]),
    )
    participant = header.get("participant")
    wait_t = footer.get("wait_end_t")
    cross_t = footer.get("cross_end_t")
    return TrialRecord(
        trial_id=header["trial_id"],
        condition=Condition(header["condition"]),
        seed=header["seed"],
        practice=header["practice"],
        participant=None if participant is None else ParticipantMeta(**participant),
        config=TrafficConfig.from_dict(header["traffic"]),
        geometry=RoadGeometry.from_dict(header["geometry"]),
        params=EngineParams(**header["engine"]),
        ticks=ticks,
        outcome=outcome,
        wait_end_tick=None if wait_t is None else round(wait_t * TICK_RATE),
        cross_end_tick=None if cross_t is None else round(cross_t * TICK_RATE),
    )


def parse_records(lines: Iterable[str]) -> tuple[Optional[dict], list[TrialRecord]]:
    """Parse a session or bare-trial JSONL stream into trial records."""
    session_header: Optional[dict] = None
    records: list[TrialRecord] = []
    header: Optional[dict] = None
    ticks: list[TickLog] = []
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        if obj.get("v") != SCHEMA_VERSION:
            raise SchemaError(
                f"line {line_no}: schema version {obj.get('v')!r}, expected {SCHEMA_VERSION}"
            )
        kind = obj.get("kind")
        if kind == "session_header":
            session_header = obj
        elif kind == "trial_header":
            if header is not None:
                raise ValueError(f"line {line_no}: trial block opened before previous closed")
            header = obj
            ticks = []
        elif kind == "tick":
            if header is None:
                raise ValueError(f"line {line_no}: tick outside a trial block")
            ticks.append(_tick_from_obj(obj))
        elif kind == "trial_footer":
            if header is None:
                raise ValueError(f"line {line_no}: footer without a header")
            records.append(_record_from_block(header, ticks, obj))
            header = None
            ticks = []
        else:
            raise ValueError(f"line {line_no}: unknown record kind {kind!r}")
    if header is not None:
        raise ValueError("file ends inside a trial block")
    return session_header, records


def load_records(path) -> tuple[Optional[dict], list[TrialRecord]]:
    with open(path, "r", encoding="utf-8") as fp:
        return parse_records(fp)
