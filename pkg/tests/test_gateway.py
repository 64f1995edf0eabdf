from __future__ import annotations

import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from crossing_lab import records
from crossing_lab.analytics import compute_trial_metrics
from crossing_lab.gateway import build_app
from crossing_lab.trial import Condition

META = {"gender": "female", "age_band": "18-30", "years_smartphone": 8, "has_license": True}


@pytest.fixture()
def client(tmp_path):
    app = build_app(tmp_path, default_pacing="lockstep")
    with TestClient(app) as test_client:
        test_client.root_dir = tmp_path
        yield test_client


def _create(client, plan=None, seed=11, pacing="lockstep"):
    body = {"participant": META, "seed": seed, "pacing": pacing}
    if plan:
        body["plan"] = plan
    response = client.post("/sessions", json=body)
    assert response.status_code == 200
    return response.json()


def _walk_frame(target=2.0, head=None, maze=None):
    frame = {
        "v": 1,
        "type": "input",
        "walk": {"cmd": "walk", "target": target},
        "client_t": 0.0,
    }
    if head:
        frame["head_toggle"] = head
    if maze:
        frame["maze_move"] = maze
    return frame


STOP_FRAME = {"v": 1, "type": "input", "walk": {"cmd": "stop"}, "client_t": 0.0}


def _gap_seeker(frame):
    """Keypress policy of the scripted participant: wait for clear road."""
    if frame["ped"]["y"] > 0.0:
        return _walk_frame(2.0)
    clear = all(not (-40.0 < v["x"] < 3.0) for v in frame["vehicles"])
    return _walk_frame(2.0) if clear else STOP_FRAME


def _drive_trial(client, session_id, scripted=None, collect=False):
    """Lockstep driver: answer every tick frame with one input frame."""
    frames = []
    client.post(f"/sessions/{session_id}/trials")
    with client.websocket_connect(f"/sessions/{session_id}/trial") as ws:
        while True:
            frame = json.loads(ws.receive_text())
            if frame["type"] == "ack":
                continue
            if frame["type"] in ("trial_end", "error"):
                frames.append(frame)
                break
            if frame["type"] == "tick":
                if collect:
                    frames.append(frame)
                if frame["trial_status"] == "running":
                    out = scripted(frame) if scripted else _gap_seeker(frame)
                    ws.send_text(json.dumps(out))
    return frames


class TestControlPlane:
    def test_create_session(self, client):
        descriptor = _create(client)
        assert descriptor["status"] == "idle"
        assert descriptor["plan"] == {"control": 10, "distracted": 10, "distracted_led": 10}
        assert descriptor["participant"]["gender"] == "female"

    def test_duplicate_creates_distinct_ids(self, client):
        a = _create(client)
        b = _create(client)
        assert a["session_id"] != b["session_id"]

    def test_malformed_meta_rejected(self, client):
        response = client.post(
            "/sessions", json={"participant": {"gender": "other", "age_band": "18-30"}}
        )
        assert response.status_code == 422

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/nope").status_code == 404
        assert client.post("/sessions/nope/trials").status_code == 404

    def test_start_while_running_conflicts(self, client):
        descriptor = _create(client, plan={"control": 1})
        session_id = descriptor["session_id"]
        assert client.post(f"/sessions/{session_id}/trials").status_code == 200
        assert client.post(f"/sessions/{session_id}/trials").status_code == 409

    def test_artifacts_require_completed_trial(self, client):
        descriptor = _create(client)
        response = client.get(f"/sessions/{descriptor['session_id']}/artifacts/logs")
        assert response.status_code == 400


class TestTrialStream:
    def test_lockstep_trial_completes(self, client):
        descriptor = _create(client, plan={"control": 1})
        session_id = descriptor["session_id"]
        frames = _drive_trial(client, session_id)
        assert frames[-1]["type"] == "trial_end"
        state = client.get(f"/sessions/{session_id}").json()
        assert state["status"] == "complete"
        assert state["trials_run"] == 1

    def test_streamed_frames_equal_persisted_ticks(self, client):
        descriptor = _create(client, plan={"control": 1})
        session_id = descriptor["session_id"]
        frames = _drive_trial(client, session_id, collect=True)
        ticks = [f for f in frames if f["type"] == "tick"]
        log = client.get(f"/sessions/{session_id}/artifacts/logs").text
        _, trials = records.parse_records(log.splitlines())
        assert len(trials) == 1
        persisted = [records.tick_obj(t) for t in trials[0].ticks]
        assert len(ticks) == len(persisted)
        for live, disk in zip(ticks, persisted):
            for key in ("t", "ped", "led", "vehicles"):
                assert live[key] == disk[key]
        # live/replay equality of the analytics follows from equal inputs
        live_metrics = compute_trial_metrics(trials[0])
        assert live_metrics == compute_trial_metrics(trials[0])

    def test_refetch_is_byte_identical(self, client):
        descriptor = _create(client, plan={"control": 1})
        session_id = descriptor["session_id"]
        _drive_trial(client, session_id)
        first = client.get(f"/sessions/{session_id}/artifacts/logs").text
        second = client.get(f"/sessions/{session_id}/artifacts/logs").text
        assert first == second
        summary_a = client.get(f"/sessions/{session_id}/artifacts/summary").text
        summary_b = client.get(f"/sessions/{session_id}/artifacts/summary").text
        assert summary_a == summary_b

    def test_artifact_kinds(self, client):
        descriptor = _create(client, plan={"control": 1})
        session_id = descriptor["session_id"]
        _drive_trial(client, session_id)
        assert "wait_time_s" in client.get(f"/sessions/{session_id}/artifacts/summary").text
        assert "min_pet" in client.get(f"/sessions/{session_id}/artifacts/design").text
        fits = json.loads(client.get(f"/sessions/{session_id}/artifacts/fit").text)
        assert "control" in fits
        assert client.get(f"/sessions/{session_id}/artifacts/bogus").status_code == 404

    def test_persisted_log_replays(self, client):
        from crossing_lab.cli import main

        descriptor = _create(client, plan={"control": 1})
        session_id = descriptor["session_id"]
        _drive_trial(client, session_id)
        log_path = client.root_dir / "sessions" / session_id / "trials.jsonl"
        assert main(["replay", str(log_path)]) == 0

    def test_led_sequence_for_distracted_led_phone_initiation(self, client):
        descriptor = _create(client, plan={"distracted_led": 1})
        session_id = descriptor["session_id"]

        def scripted(frame):
            if frame["t"] < 1.0:
                return {**STOP_FRAME, "head_toggle": "phone"}
            return _walk_frame(1.5, head="phone")

        frames = _drive_trial(client, session_id, scripted=scripted, collect=True)
        states = [f["led"]["state"] for f in frames if f["type"] == "tick"]
        assert states[0] == "white"
        assert "blue" in states
        first_blue = states.index("blue")
        assert all(s == "white" for s in states[:first_blue])
        assert all(s == "blue" for s in states[first_blue:])

    def test_disconnect_aborts_trial(self, client):
        import time

        descriptor = _create(client, plan={"control": 1})
        session_id = descriptor["session_id"]
        client.post(f"/sessions/{session_id}/trials")
        with client.websocket_connect(f"/sessions/{session_id}/trial") as ws:
            frame = json.loads(ws.receive_text())
            assert frame["type"] == "tick"
            # walk a little, then vanish mid-trial
            ws.send_text(json.dumps(_walk_frame()))
        state = None
        for _ in range(100):  # the abort lands asynchronously
            state = client.get(f"/sessions/{session_id}").json()
            if state["status"] == "idle":
                break
            time.sleep(0.05)
        assert state["status"] == "idle"
        assert state["trials_run"] == 0

    def test_practice_trial_excluded_from_progress(self, client):
        descriptor = _create(client, plan={"control": 1})
        session_id = descriptor["session_id"]
        response = client.post(f"/sessions/{session_id}/trials", json={"practice": True})
        assert response.json()["practice"] is True
        _drive_with_open_socket(client, session_id)
        state = client.get(f"/sessions/{session_id}").json()
        assert state["trials_run"] == 0 and state["status"] == "idle"
        # the real trial still runs afterwards
        frames = _drive_trial(client, session_id)
        assert frames[-1]["type"] == "trial_end"
        assert client.get(f"/sessions/{session_id}").json()["status"] == "complete"

    def test_session_complete_blocks_new_trials(self, client):
        descriptor = _create(client, plan={"control": 1})
        session_id = descriptor["session_id"]
        _drive_trial(client, session_id)
        assert client.post(f"/sessions/{session_id}/trials").status_code == 400


def _drive_with_open_socket(client, session_id):
    with client.websocket_connect(f"/sessions/{session_id}/trial") as ws:
        while True:
            frame = json.loads(ws.receive_text())
            if frame["type"] in ("trial_end", "error"):
                return
            if frame["type"] == "tick" and frame["trial_status"] == "running":
                ws.send_text(json.dumps(_walk_frame()))


class TestConcurrentSessions:
    def test_identical_seeds_produce_identical_logs(self, client):
        a = _create(client, plan={"control": 1}, seed=99)
        b = _create(client, plan={"control": 1}, seed=99)
        ids = (a["session_id"], b["session_id"])
        for session_id in ids:
            client.post(f"/sessions/{session_id}/trials")
        # interleave the two sockets tick by tick
        with client.websocket_connect(f"/sessions/{ids[0]}/trial") as ws_a:
            with client.websocket_connect(f"/sessions/{ids[1]}/trial") as ws_b:
                done = [False, False]
                sockets = (ws_a, ws_b)
                while not all(done):
                    for i, ws in enumerate(sockets):
                        if done[i]:
                            continue
                        frame = json.loads(ws.receive_text())
                        if frame["type"] in ("trial_end", "error"):
                            done[i] = True
                        elif frame["type"] == "tick" and frame["trial_status"] == "running":
                            ws.send_text(json.dumps(_walk_frame()))
        logs = [
            (client.root_dir / "sessions" / session_id / "trials.jsonl").read_bytes()
            for session_id in ids
        ]
        assert logs[0] == logs[1]


class TestBridgePacing:
    def test_realtime_latest_wins_and_all_acked(self):
        import queue

        from crossing_lab.gateway import BridgeInputSource
        from crossing_lab.trial import Observation, PedestrianState, LedState, Condition
        from crossing_lab.traffic import RoadGeometry

        acks = []
        inbound = queue.Queue()
        source = BridgeInputSource(inbound, "realtime", acks.append)

        def obs(tick):
            return Observation(
                t=tick / 60.0, tick=tick, condition=Condition.CONTROL,
                ped=PedestrianState(), led=LedState("off"), vehicles=[],
                geometry=RoadGeometry(), wait_end_t=None,
            )

        # burst of five frames within one tick: last consumed, all acknowledged
        from crossing_lab.trial import PedInput

        for target in (0.5, 0.8, 1.1, 1.4, 1.7):
            inbound.put(PedInput(walk_target=target))
        consumed, held = source.next_input(obs(1))
        assert consumed.walk_target == 1.7
        assert not held
        assert len(acks) == 5

        # a missed tick repeats the previous input and marks it held
        repeated, held = source.next_input(obs(2))
        assert held and repeated.walk_target == 1.7
        assert len(acks) == 5

    def test_lockstep_blocks_for_exactly_one_frame(self):
        import queue

        from crossing_lab.gateway import BridgeInputSource
        from crossing_lab.trial import (
            Condition, InputExhausted, LedState, Observation, PedInput, PedestrianState,
        )
        from crossing_lab.traffic import RoadGeometry

        acks = []
        inbound = queue.Queue()
        source = BridgeInputSource(inbound, "lockstep", acks.append)
        obs = Observation(
            t=0.0, tick=1, condition=Condition.CONTROL, ped=PedestrianState(),
            led=LedState("off"), vehicles=[], geometry=RoadGeometry(), wait_end_t=None,
        )
        inbound.put(PedInput(walk_target=1.0))
        inbound.put(PedInput(walk_target=2.0))
        first, held = source.next_input(obs)
        assert first.walk_target == 1.0 and not held
        second, _ = source.next_input(obs)
        assert second.walk_target == 2.0
        assert len(acks) == 2
        inbound.put(None)  # disconnect sentinel
        import pytest as _pytest

        with _pytest.raises(InputExhausted):
            source.next_input(obs)
