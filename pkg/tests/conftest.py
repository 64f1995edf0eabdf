from __future__ import annotations

import math

import pytest

from crossing_lab.traffic import RoadGeometry, TrafficConfig, TICK_RATE
from crossing_lab.trial import (
    Condition,
    EngineParams,
    LedState,
    LED_OFF,
    OutcomeStatus,
    ParticipantMeta,
    PedInput,
    PedSnap,
    TickLog,
    TrialOutcome,
    TrialRecord,
    VehicleSnap,
)

DT = 1.0 / TICK_RATE


@pytest.fixture(scope="session")
def config() -> TrafficConfig:
    return TrafficConfig()


@pytest.fixture(scope="session")
def geometry() -> RoadGeometry:
    return RoadGeometry()


class ScriptedWalker:
    """Walks at a fixed target from a given start tick, optionally toggling."""

    def __init__(self, start_tick: int, target: float = 1.0, head_script=None):
        self.start_tick = start_tick
        self.target = target
        self.head_script = head_script or {}

    def next_input(self, obs):
        toggle = self.head_script.get(obs.tick)
        walk = self.target if obs.tick >= self.start_tick else None
        return PedInput(walk_target=walk, head_toggle=toggle, timestamp=obs.tick), False


class NeverWalk:
    def next_input(self, obs):
        return PedInput(timestamp=obs.tick), False


def make_record(
    ped_path,
    vehicle_paths,
    condition: Condition = Condition.CONTROL,
    outcome: TrialOutcome = TrialOutcome(OutcomeStatus.SUCCESS),
    wait_end_tick=None,
    cross_end_tick=None,
    config: TrafficConfig | None = None,
    geometry: RoadGeometry | None = None,
    participant: ParticipantMeta | None = ParticipantMeta(),
    leds=None,
) -> TrialRecord:
    """Build a synthetic TrialRecord from explicit per-tick trajectories.

    ped_path: list of (y, v) per tick. vehicle_paths: {id: list of (x, v)}
    aligned to the same ticks (entries may be None while absent).
    """
    config = config or TrafficConfig()
    geometry = geometry or RoadGeometry()
    n = len(ped_path)
    ticks = []
    for k in range(n):
        y, v = ped_path[k]
        vehicles = []
        for vid, path in vehicle_paths.items():
            entry = path[k] if k < len(path) else None
            if entry is None:
                continue
            x, vv = entry
            vehicles.append(VehicleSnap(vid, x, vv, 0.0))
        led = leds[k] if leds else LED_OFF
        head = "road"
        ticks.append(
            TickLog(
                t=k / TICK_RATE,
                inp=None if k == 0 else PedInput(),
                held=k != 0,
                ped=PedSnap(y, v, head, False, 0),
                led=led,
                vehicles=tuple(vehicles),
            )
        )
    return TrialRecord(
        trial_id="synthetic",
        condition=condition,
        seed=0,
        practice=False,
        participant=participant,
        config=config,
        geometry=geometry,
        params=EngineParams(),
        ticks=ticks,
        outcome=outcome,
        wait_end_tick=wait_end_tick,
        cross_end_tick=cross_end_tick,
    )


def constant_speed_ped(wait_s: float, speed: float, total_s: float, crossing_length=5.0):
    """(y, v) path: hold the curb, then cross at constant speed."""
    path = []
    n = round(total_s * TICK_RATE)
    y = 0.0
    for k in range(n + 1):
        t = k / TICK_RATE
        if t <= wait_s:
            path.append((0.0, 0.0))
        else:
            y = min(crossing_length, (t - wait_s) * speed)
            path.append((y, speed if y < crossing_length else speed))
    return path


def constant_speed_vehicle(x0: float, v: float, total_s: float):
    n = round(total_s * TICK_RATE)
    return [(x0 + v * (k / TICK_RATE), v) for k in range(n + 1)]
