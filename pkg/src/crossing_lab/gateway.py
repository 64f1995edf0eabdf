"""Live session gateway: HTTP control plane plus a per-trial WebSocket stream.

Wire protocol (schema v1): every frame is one JSON object per WebSocket
message. The server streams tick frames {v, type:"tick", t, trial_status,
ped, led, vehicles} and acknowledges each input frame with {v, type:"ack",
tick}. Clients send input frames {v, type:"input", walk, head_toggle,
maze_move, client_t}. Simulated time is authoritative: a stalled client
pauses the engine at a tick boundary, ticks are never dropped. All times are
seconds, positions meters.
"""
from __future__ import annotations

import asyncio
import json
import queue
import secrets
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from . import records
from .analytics import compute_trial_metrics, metrics_csv, summarize
from .mnl import DEFAULT_DESIGNS, EstimationError, build_design, estimate
from .records import dumps_line, tick_obj
from .traffic import RoadGeometry, TrafficConfig
from .trial import (
    SCHEMA_VERSION,
    Condition,
    EngineParams,
    HeadOrientation,
    InputExhausted,
    Observation,
    OutcomeStatus,
    ParticipantMeta,
    PedInput,
    ProtocolError,
    SessionPlan,
    SessionTracker,
    TrialRecord,
    derive_trial_seed,
    run_trial,
)

LOCKSTEP_TIMEOUT = 30.0   # s of client silence before a trial is aborted
STALL_TICKS = 30          # realtime: held ticks tolerated before pausing


class ParticipantModel(BaseModel):
    gender: str = Field(pattern="^(female|male)$")
    age_band: str = Field(pattern="^(18-30|30\\+)$")
    years_smartphone: int = 5
    has_license: bool = True


class CreateSessionRequest(BaseModel):
    participant: ParticipantModel
    plan: Optional[dict[str, int]] = None
    seed: Optional[int] = None
    pacing: Optional[str] = Field(default=None, pattern="^(realtime|lockstep)$")


class StartTrialRequest(BaseModel):
    practice: bool = False


@dataclass
class PendingTrial:
    condition: Condition
    scenario: int
    attempt: int
    seed: int
    practice: bool
    trial_index: int


@dataclass
class SessionRuntime:
    session_id: str
    participant: ParticipantMeta
    plan: SessionPlan
    tracker: SessionTracker
    seed: int
    pacing: str
    directory: Path
    status: str = "idle"  # idle | trial_running | complete
    trials_run: int = 0
    practice_run: int = 0
    pending: Optional[PendingTrial] = None
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)

    def descriptor(self) -> dict:
        return {
            "v": SCHEMA_VERSION,
            "session_id": self.session_id,
            "participant": asdict(self.participant),
            "plan": self.plan.to_dict(),
            "pacing": self.pacing,
            "status": self.status,
            "trials_run": self.trials_run,
            "progress": {
                "block": self.tracker.block,
                "successes": self.tracker.successes,
                "complete": self.tracker.complete,
            },
            "next_condition": None
            if self.tracker.complete
            else self.plan.targets[self.tracker.block][0].value,
        }


def _input_from_frame(frame: dict) -> PedInput:
    walk = frame.get("walk")
    target = None
    if isinstance(walk, dict) and walk.get("cmd") == "walk":
        target = float(walk.get("target", 1.4))
    head = frame.get("head_toggle")
    return PedInput(
        walk_target=target,
        head_toggle=None if head is None else HeadOrientation(head),
        maze_move=frame.get("maze_move"),
        timestamp=0,
    )


class BridgeInputSource:
    """Feeds a live input queue into the engine under the session's pacing.

    lockstep: exactly one input frame consumed per tick, client-paced.
    realtime: wall-clock 60 Hz, latest frame wins, missed ticks repeat the
    previous input and are marked held; a long stall pauses simulated time.
    """

    def __init__(self, inbound: queue.Queue, pacing: str, push):
        self.inbound = inbound
        self.pacing = pacing
        self.push = push
        self.last = PedInput()
        self.start_wall: Optional[float] = None
        self.starved = 0

    def _ack(self, tick: int, count: int = 1) -> None:
        for _ in range(count):
            self.push({"v": SCHEMA_VERSION, "type": "ack", "tick": tick})

    def next_input(self, obs: Observation):
        if self.pacing == "lockstep":
            try:
                item = self.inbound.get(timeout=LOCKSTEP_TIMEOUT)
            except queue.Empty:
                raise InputExhausted()
            if item is None:
                raise InputExhausted()
            self._ack(obs.tick)
            self.last = item
            return item, False

        dt = 1.0 / 60.0
        if self.start_wall is None:
            self.start_wall = time.monotonic() - dt
        deadline = self.start_wall + obs.tick * dt
        delay = deadline - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        latest = None
        got = 0
        while True:
            try:
                item = self.inbound.get_nowait()
            except queue.Empty:
                break
            if item is None:
                raise InputExhausted()
            latest = item
            got += 1
        if got:
            self._ack(obs.tick, got)
            self.starved = 0
            self.last = latest
            return latest, False
        self.starved += 1
        if self.starved > STALL_TICKS:
            # pause at this tick boundary until the client speaks again
            try:
                item = self.inbound.get(timeout=LOCKSTEP_TIMEOUT)
            except queue.Empty:
                raise InputExhausted()
            if item is None:
                raise InputExhausted()
            self._ack(obs.tick)
            self.starved = 0
            self.start_wall = time.monotonic() - obs.tick * dt
            self.last = item
            return item, False
        return self.last, True


def _tick_frame(tick, status: str) -> dict:
    frame = tick_obj(tick)
    frame["kind"] = "tick"
    frame["type"] = "tick"
    frame["trial_status"] = status
    return frame


class Gateway:
    def __init__(
        self,
        root: Path,
        config: Optional[TrafficConfig] = None,
        geometry: Optional[RoadGeometry] = None,
        params: Optional[EngineParams] = None,
        default_pacing: str = "realtime",
    ):
        self.root = Path(root)
        self.config = config or TrafficConfig()
        self.geometry = geometry or RoadGeometry()
        self.params = params or EngineParams()
        self.default_pacing = default_pacing
        self.sessions: dict[str, SessionRuntime] = {}
        self._counter = 0

    # -- control plane ------------------------------------------------------

    def create_session(self, request: CreateSessionRequest) -> SessionRuntime:
        self._counter += 1
        session_id = f"s{self._counter:04d}{secrets.token_hex(3)}"
        seed = request.seed
        if seed is None:
            seed = int.from_bytes(secrets.token_bytes(6), "big")
        plan = SessionPlan()
        if request.plan:
            counts = {Condition(k): v for k, v in request.plan.items()}
            plan = SessionPlan.from_counts(counts)
        participant = ParticipantMeta(**request.participant.model_dump())
        directory = self.root / "sessions" / session_id
        directory.mkdir(parents=True, exist_ok=True)
        runtime = SessionRuntime(
            session_id=session_id,
            participant=participant,
            plan=plan,
            tracker=SessionTracker(plan, seed),
            seed=seed,
            pacing=request.pacing or self.default_pacing,
            directory=directory,
        )
        header = {
            "v": SCHEMA_VERSION,
            "kind": "session_header",
            "seed": seed,
            "plan": plan.to_dict(),
            "participant": asdict(participant),
        }
        log = directory / "trials.jsonl"
        if not log.exists():
            log.write_text(dumps_line(header) + "\n", encoding="utf-8")
        (directory / "descriptor.json").write_text(
            json.dumps(runtime.descriptor(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        self.sessions[session_id] = runtime
        return runtime

    def get(self, session_id: str) -> SessionRuntime:
        runtime = self.sessions.get(session_id)
        if runtime is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return runtime

    def start_trial(self, session_id: str, practice: bool) -> dict:
        runtime = self.get(session_id)
        if runtime.status == "trial_running":
            raise HTTPException(status_code=409, detail="trial already running")
        if runtime.tracker.complete:
            raise HTTPException(status_code=400, detail="session complete")
        condition, scenario, attempt, seed = runtime.tracker.next_trial()
        if practice:
            seed = derive_trial_seed(runtime.seed, 97, runtime.practice_run)
        runtime.pending = PendingTrial(
            condition=condition,
            scenario=scenario,
            attempt=attempt,
            seed=seed,
            practice=practice,
            trial_index=runtime.trials_run + runtime.practice_run,
        )
        runtime.status = "trial_running"
        return {
            "trial_index": runtime.pending.trial_index,
            "condition": condition.value,
            "practice": practice,
            "stream": f"/sessions/{session_id}/trial",
        }

    def _persist(self, runtime: SessionRuntime, record: TrialRecord) -> None:
        with open(runtime.directory / "trials.jsonl", "a", encoding="utf-8") as fp:
            records.write_trial(fp, record)
        (runtime.directory / "descriptor.json").write_text(
            json.dumps(runtime.descriptor(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )

    def finish_trial(self, runtime: SessionRuntime, record: TrialRecord) -> None:
        pending = runtime.pending
        runtime.pending = None
        self._persist(runtime, record)
        if pending is not None and pending.practice:
            runtime.practice_run += 1
        else:
            runtime.trials_run += 1
            runtime.tracker.record(record.outcome)
        runtime.status = "complete" if runtime.tracker.complete else "idle"

    def abort_trial(self, runtime: SessionRuntime) -> None:
        runtime.pending = None
        if runtime.status == "trial_running":
            runtime.status = "idle"

    # -- artifacts -----------------------------------------------------------

    def artifacts(self, session_id: str, kind: str) -> tuple[str, str]:
        runtime = self.get(session_id)
        log = runtime.directory / "trials.jsonl"
        _, trials = records.load_records(log)
        trials = [t for t in trials if not t.practice]
        if not trials:
            raise HTTPException(status_code=400, detail="no completed trials")
        if kind == "logs":
            return log.read_text(encoding="utf-8"), "application/jsonl"
        metrics = [
            compute_trial_metrics(t, participant_id=session_id) for t in trials
        ]
        if kind == "summary":
            return summarize(metrics).to_csv(), "text/csv"
        if kind == "design":
            return metrics_csv(metrics), "text/csv"
        if kind == "fit":
            fits = {}
            for cond, spec in DEFAULT_DESIGNS.items():
                try:
                    fits[cond.value] = estimate(build_design(metrics, spec)).to_dict()
                except (EstimationError, ValueError) as exc:
                    fits[cond.value] = {"error": str(exc)}
            return json.dumps(fits, sort_keys=True, indent=2), "application/json"
        raise HTTPException(status_code=404, detail=f"unknown artifact kind {kind!r}")


def build_app(
    root: Path,
    config: Optional[TrafficConfig] = None,
    geometry: Optional[RoadGeometry] = None,
    params: Optional[EngineParams] = None,
    default_pacing: str = "realtime",
    ui_dir: Optional[str] = None,
) -> FastAPI:
    gateway = Gateway(
        Path(root), config=config, geometry=geometry, params=params,
        default_pacing=default_pacing,
    )
    app = FastAPI(title="crossing-lab gateway")
    app.state.gateway = gateway

    @app.get("/health")
    def health():
        return {"ok": True, "v": SCHEMA_VERSION}

    @app.post("/sessions")
    def create_session(request: CreateSessionRequest):
        runtime = gateway.create_session(request)
        return runtime.descriptor()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return gateway.get(session_id).descriptor()

    @app.post("/sessions/{session_id}/trials")
    def start_trial(session_id: str, request: Optional[StartTrialRequest] = None):
        practice = bool(request and request.practice)
        return gateway.start_trial(session_id, practice)

    @app.get("/sessions/{session_id}/artifacts/{kind}")
    def artifacts(session_id: str, kind: str):
        body, media_type = gateway.artifacts(session_id, kind)
        return PlainTextResponse(body, media_type=media_type)

    @app.websocket("/sessions/{session_id}/trial")
    async def trial_socket(ws: WebSocket, session_id: str):
        await ws.accept()
        runtime = gateway.sessions.get(session_id)
        if runtime is None or runtime.pending is None:
            await ws.send_text(
                dumps_line({"v": SCHEMA_VERSION, "type": "error", "message": "no pending trial"})
            )
            await ws.close()
            return
        async with runtime.lock:
            await _run_trial_socket(gateway, runtime, ws)

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


async def _run_trial_socket(gateway: Gateway, runtime: SessionRuntime, ws: WebSocket) -> None:
    pending = runtime.pending
    loop = asyncio.get_running_loop()
    outbound: asyncio.Queue = asyncio.Queue()
    inbound: queue.Queue = queue.Queue()

    def push(obj) -> None:
        loop.call_soon_threadsafe(outbound.put_nowait, obj)

    source = BridgeInputSource(inbound, runtime.pacing, push)

    def on_tick(tick, status: str) -> None:
        push(_tick_frame(tick, status))

    def engine() -> None:
        try:
            record = run_trial(
                gateway.config,
                gateway.geometry,
                pending.condition,
                source,
                pending.seed,
                trial_id=f"trial_{pending.trial_index:04d}",
                practice=pending.practice,
                participant=runtime.participant,
                params=gateway.params,
                on_tick=on_tick,
            )
            push({"type": "_complete", "record": record})
        except ProtocolError as exc:
            push({"type": "_aborted", "message": str(exc)})
        except Exception as exc:  # pragma: no cover - engine bug surface
            push({"type": "_aborted", "message": f"engine failure: {exc!r}"})

    engine_future = loop.run_in_executor(None, engine)

    async def receiver() -> None:
        try:
            while True:
                text = await ws.receive_text()
                try:
                    frame = json.loads(text)
                except json.JSONDecodeError:
                    continue
                if frame.get("v") != SCHEMA_VERSION or frame.get("type") != "input":
                    push({"v": SCHEMA_VERSION, "type": "error", "message": "bad frame"})
                    continue
                inbound.put(_input_from_frame(frame))
        except WebSocketDisconnect:
            inbound.put(None)
        except RuntimeError:
            inbound.put(None)

    recv_task = asyncio.create_task(receiver())
    try:
        while True:
            frame = await outbound.get()
            kind = frame.get("type")
            if kind == "_complete":
                gateway.finish_trial(runtime, frame["record"])
                try:
                    await ws.send_text(
                        dumps_line(
                            {
                                "v": SCHEMA_VERSION,
                                "type": "trial_end",
                                "session_status": runtime.status,
                            }
                        )
                    )
                except (WebSocketDisconnect, RuntimeError):
                    pass
                break
            if kind == "_aborted":
                gateway.abort_trial(runtime)
                try:
                    await ws.send_text(
                        dumps_line(
                            {"v": SCHEMA_VERSION, "type": "error", "message": frame["message"]}
                        )
                    )
                except (WebSocketDisconnect, RuntimeError):
                    pass
                break
            try:
                await ws.send_text(dumps_line(frame))
            except (WebSocketDisconnect, RuntimeError):
                inbound.put(None)  # engine aborts on the sentinel
    finally:
        # reached on completion, abort, or cancellation of the socket task;
        # an unfinished trial is abandoned and will be re-presented
        if runtime.pending is not None:
            gateway.abort_trial(runtime)
        inbound.put(None)
        recv_task.cancel()
        try:
            await engine_future
        except BaseException:
            pass
        try:
            await ws.close()
        except Exception:
            pass
