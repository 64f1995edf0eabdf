"""Crossing trial orchestration.

One trial advances the pedestrian and the traffic world in lockstep on the
shared tick grid, applies the LED treatment rule, classifies the outcome and
keeps the full tick log. A session runs trials per condition until the target
number of successful crossings, re-presenting a failed or timed-out scenario
with the same seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple, Optional, Protocol

import numpy as np

from .traffic import (
    TICK_RATE,
    ArrivalSchedule,
    RoadGeometry,
    TrafficConfig,
    TrafficWorld,
    detect_collision,
    generate_arrival_schedule,
    generate_preroll,
)

PED_SPEED_CAP = 2.0          # running not allowed
PED_ACCEL_LIMIT = 1.5
TRIAL_TIMEOUT = 60.0
LED_HALF_PERIOD_TICKS = 15   # 2 Hz square wave on the 60 Hz grid

SCHEMA_VERSION = 1


class ProtocolError(RuntimeError):
    """Input source failed mid-trial; the trial is aborted, not classified."""


class SessionAbortError(RuntimeError):
    """Trial budget exhausted before the condition plan completed."""


class InputExhausted(Exception):
    """Raised by an input source that cannot supply the next tick's input."""


class Condition(str, Enum):
    CONTROL = "control"
    DISTRACTED = "distracted"
    DISTRACTED_LED = "distracted_led"

    @property
    def is_distracted(self) -> bool:
        return self is not Condition.CONTROL


CONDITION_ORDER = (Condition.CONTROL, Condition.DISTRACTED, Condition.DISTRACTED_LED)


class HeadOrientation(str, Enum):
    ROAD = "road"
    PHONE = "phone"


@dataclass(frozen=True, slots=True)
class PedestrianState:
    """Pedestrian along the crossing axis; y = 0 is the starting curb."""

    y: float = 0.0
    speed: float = 0.0
    head: HeadOrientation = HeadOrientation.ROAD
    maze_active: bool = False
    mazes_solved: int = 0
    crossing_initiated: bool = False


class LedState(NamedTuple):
    """Crosswalk LED strip. phase counts ticks since the blue flash began."""

    mode: str  # "off" | "white" | "blue"
    phase: int = 0

    @property
    def lit(self) -> bool:
        if self.mode == "blue":
            return (self.phase // LED_HALF_PERIOD_TICKS) % 2 == 0
        return self.mode == "white"


LED_OFF = LedState("off")
LED_WHITE = LedState("white")


class PedInput(NamedTuple):
    """One tick of pedestrian input.

    walk_target None means stop; head_toggle is an absolute orientation so a
    repeated frame is idempotent; maze_move "solved" completes one maze and is
    ignored on held (repeated) ticks.
    """

    walk_target: Optional[float] = None
    head_toggle: Optional[HeadOrientation] = None
    maze_move: Optional[str] = None
    timestamp: int = 0


STOP_INPUT = PedInput()


class PedSnap(NamedTuple):
    y: float
    v: float
    head: str
    maze_active: bool
    mazes_solved: int


class VehicleSnap(NamedTuple):
    id: int
    x: float
    v: float
    a: float


class TickLog(NamedTuple):
    t: float
    inp: Optional[PedInput]
    held: bool
    ped: PedSnap
    led: LedState
    vehicles: tuple[VehicleSnap, ...]


class OutcomeStatus(str, Enum):
    SUCCESS = "success"
    FAILED = "failed"
    TIMEOUT = "timeout"


class FailureCause(str, Enum):
    COLLISION = "collision"
    SIGNIFICANT_YIELD = "significant_yield"


@dataclass(frozen=True)
class TrialOutcome:
    status: OutcomeStatus
    cause: Optional[FailureCause] = None


@dataclass(frozen=True)
class ParticipantMeta:
    gender: str = "female"     # "female" | "male"
    age_band: str = "18-30"    # "18-30" | "30+"
    years_smartphone: int = 5
    has_license: bool = True

    @property
    def female(self) -> bool:
        return self.gender == "female"


@dataclass(frozen=True)
class EngineParams:
    """Trial-level constants; echoed into the log header so replay is exact."""

    timeout: float = TRIAL_TIMEOUT
    speed_cap: float = PED_SPEED_CAP
    accel_limit: float = PED_ACCEL_LIMIT
    yield_decel_threshold: float = 3.0
    # hard braking longer than this counts as a forced yield; zero means a
    # single tick suffices
    yield_decel_sustain: float = 0.0
    yield_speed_drop: float = 0.5
    # the relative-drop rule only applies to vehicles that were actually
    # flowing at initiation; slower ones (spawning, queued) ease off in
    # normal driving and only hard braking marks them significant
    yield_min_baseline: float = 7.0
    grace: float = 5.0               # post-success observation tail for PET
    warmup: float = 20.0             # unlogged pre-roll so trials start in steady flow


@dataclass
class TrialRecord:
    trial_id: str
    condition: Condition
    seed: int
    practice: bool
    participant: Optional[ParticipantMeta]
    config: TrafficConfig
    geometry: RoadGeometry
    params: EngineParams
    ticks: list[TickLog]
    outcome: TrialOutcome
    wait_end_tick: Optional[int]
    cross_end_tick: Optional[int]

    @property
    def wait_end_t(self) -> Optional[float]:
        return None if self.wait_end_tick is None else self.wait_end_tick / TICK_RATE

    @property
    def cross_end_t(self) -> Optional[float]:
        return None if self.cross_end_tick is None else self.cross_end_tick / TICK_RATE

    @property
    def duration(self) -> float:
        return self.ticks[-1].t


@dataclass
class Observation:
    """What an input source may see at the top of a tick."""

    t: float
    tick: int
    condition: Condition
    ped: PedestrianState
    led: LedState
    vehicles: list
    geometry: RoadGeometry
    wait_end_t: Optional[float]


class InputSource(Protocol):
    def next_input(self, obs: Observation) -> tuple[PedInput, bool]:
        """Return (input, held) for the tick described by obs."""
        ...


def apply_ped_input(
    state: PedestrianState,
    inp: PedInput,
    dt: float,
    condition: Condition,
    *,
    crossing_length: float = 5.0,
    speed_cap: float = PED_SPEED_CAP,
    accel_limit: float = PED_ACCEL_LIMIT,
    held: bool = False,
) -> PedestrianState:
    """Advance the pedestrian one tick. Inputs are clamped, never rejected."""
    head = state.head
    if inp.head_toggle is not None and condition.is_distracted:
        head = inp.head_toggle
    maze_active = condition.is_distracted and head is HeadOrientation.PHONE
    mazes = state.mazes_solved
    if inp.maze_move == "solved" and maze_active and not held:
        mazes += 1

    target = 0.0
    if inp.walk_target is not None:
        target = min(max(inp.walk_target, 0.0), speed_cap)
    dv = target - state.speed
    limit = accel_limit * dt
    if dv > limit:
        dv = limit
    elif dv < -limit:
        dv = -limit
    speed = min(max(state.speed + dv, 0.0), speed_cap)
    y = state.y + speed * dt
    if y > crossing_length:
        y = crossing_length
    elif y < 0.0:
        y = 0.0
    return PedestrianState(
        y=y,
        speed=speed,
        head=head,
        maze_active=maze_active,
        mazes_solved=mazes,
        crossing_initiated=state.crossing_initiated or y > 0.0,
    )


def update_led(
    condition: Condition,
    ped: PedestrianState,
    prev: LedState,
    *,
    initiated_now: bool = False,
) -> LedState:
    """LED treatment rule.

    Only the treated condition drives the strip. White on the curb; switches
    to the blue flash at the tick crossing starts while the head faces the
    phone, and then never reverts. A crossing initiated while watching the
    road leaves the strip white for the rest of the trial.
    """
    if condition is not Condition.DISTRACTED_LED:
        return LED_OFF
    if prev.mode == "blue":
        return LedState("blue", prev.phase + 1)
    if initiated_now and ped.head is HeadOrientation.PHONE:
        return LedState("blue", 0)
    return LED_WHITE


class _YieldTracker:
    """Online detector for the significant-yield failure rule."""

    def __init__(self, params: EngineParams):
        self.params = params
        self.baselines: dict[int, float] = {}
        self.hard_streaks: dict[int, int] = {}
        self.sustain_ticks = max(1, round(params.yield_decel_sustain * TICK_RATE))

    def capture(self, vehicles) -> None:
        self.baselines = {veh.id: veh.v for veh in vehicles}

    def significant(self, vehicles, yield_binding: dict[int, bool]) -> bool:
        p = self.params
        for veh in vehicles:
            if not yield_binding.get(veh.id, False):
                self.hard_streaks[veh.id] = 0
                continue
            if veh.a < -p.yield_decel_threshold:
                streak = self.hard_streaks.get(veh.id, 0) + 1
                self.hard_streaks[veh.id] = streak
                if streak >= self.sustain_ticks:
                    return True
            else:
                self.hard_streaks[veh.id] = 0
            base = self.baselines.get(veh.id)
            if (
                base is not None
                and base >= p.yield_min_baseline
                and veh.a < -1e-2
                and veh.v < p.yield_speed_drop * base
            ):
                return True
        return False


def classify_significant_yield(
    record: TrialRecord, upto_tick: Optional[int] = None
) -> bool:
    """Offline re-derivation of the significant-yield rule from a tick log.

    Rebuilds the per-tick yield/car-following attribution from recorded
    states; agrees exactly with the online classification because both
    evaluate the same expressions on the same floats.
    """
    from .traffic import VehicleState, _yield_required, car_following_accel, pedestrian_zone_window

    if record.wait_end_tick is None:
        return False
    params = record.params
    config = record.config
    geometry = record.geometry
    ticks = record.ticks
    end = len(ticks) if upto_tick is None else min(upto_tick + 1, len(ticks))
    baselines = {v.id: v.v for v in ticks[record.wait_end_tick].vehicles}
    hard_streaks: dict[int, int] = {}
    sustain = max(1, round(params.yield_decel_sustain * TICK_RATE))
    for k in range(max(record.wait_end_tick, 1), end):
        cur = ticks[k]
        # pedestrian state the step-k decisions saw (after the ped moved)
        ped_now = PedestrianState(y=cur.ped.y, speed=cur.ped.v)
        window = pedestrian_zone_window(ped_now, geometry)
        cur_by_id = {v.id: v for v in cur.vehicles}
        prev_ids = {v.id for v in ticks[k - 1].vehicles}
        # decision list at pre-step positions: previous tick's fleet plus the
        # vehicles that spawned this tick, downstream first
        decision: list[VehicleState] = [
            VehicleState(id=v.id, x=v.x, v=v.v, a=v.a, spawn_time=0.0)
            for v in ticks[k - 1].vehicles
        ]
        for snap in cur.vehicles:
            if snap.id not in prev_ids:
                # spawned this tick; the engine may have staggered it behind
                # the platoon tail, so rebuild its entry position
                decision.append(
                    VehicleState(
                        id=snap.id,
                        x=snap.x - snap.v * config.tick_dt,
                        v=0.0,
                        a=0.0,
                        spawn_time=0.0,
                    )
                )
        leader = None
        for veh in decision:
            a_cf = car_following_accel(veh, leader, config)
            required = _yield_required(veh, window, geometry, config)
            binding = required is not None and -required < a_cf
            leader = veh
            after = cur_by_id.get(veh.id)
            if after is None or not binding:
                hard_streaks[veh.id] = 0
                continue
            if after.a < -params.yield_decel_threshold:
                streak = hard_streaks.get(veh.id, 0) + 1
                hard_streaks[veh.id] = streak
                if streak >= sustain:
                    return True
            else:
                hard_streaks[veh.id] = 0
            base = baselines.get(veh.id)
            if (
                base is not None
                and base >= params.yield_min_baseline
                and after.a < -1e-2
                and after.v < params.yield_speed_drop * base
            ):
                return True
    return False


def _snapshot_vehicles(world: TrafficWorld) -> tuple[VehicleSnap, ...]:
    return tuple(VehicleSnap(v.id, v.x, v.v, v.a) for v in world.vehicles)


def _snapshot_ped(ped: PedestrianState) -> PedSnap:
    return PedSnap(ped.y, ped.speed, ped.head.value, ped.maze_active, ped.mazes_solved)


def run_trial(
    config: TrafficConfig,
    geometry: RoadGeometry,
    condition: Condition,
    input_source: InputSource,
    seed: int,
    *,
    trial_id: str = "trial",
    practice: bool = False,
    participant: Optional[ParticipantMeta] = None,
    params: EngineParams = EngineParams(),
    schedule: Optional[ArrivalSchedule] = None,
    on_tick: Optional[Callable[[TickLog, str], None]] = None,
) -> TrialRecord:
    """Run one crossing trial to its outcome.

    Deterministic given (seed, input stream): the arrival schedule comes from
    the seed and everything else is fixed-point tick arithmetic. After a
    successful crossing the world is observed for a short grace tail (with
    synthesized held inputs) so the post-encroachment interval against the
    next vehicle lands inside the record.
    """
    if schedule is None:
        schedule = generate_arrival_schedule(config, params.timeout, seed=seed)
    ped = PedestrianState()
    warmup_ticks = round(params.warmup * TICK_RATE)
    world = TrafficWorld(
        config,
        geometry,
        schedule,
        preroll=generate_preroll(config, params.warmup, seed),
        start_tick=-warmup_ticks,
    )
    for k in range(-warmup_ticks + 1, 1):
        world.step(k, ped)
    led = LED_WHITE if condition is Condition.DISTRACTED_LED else LED_OFF
    dt = config.tick_dt

    ticks: list[TickLog] = [
        TickLog(0.0, None, False, _snapshot_ped(ped), led, _snapshot_vehicles(world))
    ]
    if on_tick is not None:
        on_tick(ticks[0], "running")

    tracker = _YieldTracker(params)
    outcome: Optional[TrialOutcome] = None
    wait_end: Optional[int] = None
    cross_end: Optional[int] = None
    grace_end = 0
    last_input = STOP_INPUT
    n_ticks = round(params.timeout * TICK_RATE)

    for k in range(1, n_ticks + 1):
        if outcome is None:
            obs = Observation(
                t=(k - 1) / TICK_RATE,
                tick=k,
                condition=condition,
                ped=ped,
                led=led,
                vehicles=world.vehicles,
                geometry=geometry,
                wait_end_t=None if wait_end is None else wait_end / TICK_RATE,
            )
            try:
                inp, held = input_source.next_input(obs)
            except InputExhausted as exc:
                raise ProtocolError(f"input source exhausted at tick {k}") from exc
            last_input = inp
        else:
            inp, held = last_input, True  # grace tail repeats the last input

        prev_initiated = ped.crossing_initiated
        ped = apply_ped_input(
            ped,
            inp,
            dt,
            condition,
            crossing_length=geometry.crossing_length,
            speed_cap=params.speed_cap,
            accel_limit=params.accel_limit,
            held=held,
        )
        initiated_now = ped.crossing_initiated and not prev_initiated
        if initiated_now:
            wait_end = k
            tracker.capture(world.vehicles)

        step = world.step(k, ped)
        led = update_led(condition, ped, led, initiated_now=initiated_now)
        tick_log = TickLog(
            k / TICK_RATE, inp, held, _snapshot_ped(ped), led, _snapshot_vehicles(world)
        )
        ticks.append(tick_log)

        if outcome is None and ped.crossing_initiated:
            collided = any(
                detect_collision(v, ped, geometry)
                for v in world.vehicles
                if -1.0 < v.x < geometry.ped_path_x + v.length + 1.0
            )
            if collided:
                outcome = TrialOutcome(OutcomeStatus.FAILED, FailureCause.COLLISION)
            elif tracker.significant(world.vehicles, step.yield_binding):
                outcome = TrialOutcome(OutcomeStatus.FAILED, FailureCause.SIGNIFICANT_YIELD)
            elif ped.y >= geometry.crossing_length:
                outcome = TrialOutcome(OutcomeStatus.SUCCESS)
                cross_end = k
                grace_end = min(k + round(params.grace * TICK_RATE), n_ticks)

        if on_tick is not None:
            status = "running" if outcome is None else (
                "grace" if outcome.status is OutcomeStatus.SUCCESS and k < grace_end else "done"
            )
            on_tick(tick_log, status)

        if outcome is not None:
            if outcome.status is not OutcomeStatus.SUCCESS or k >= grace_end:
                break

    if outcome is None:
        outcome = TrialOutcome(OutcomeStatus.TIMEOUT)

    return TrialRecord(
        trial_id=trial_id,
        condition=condition,
        seed=seed,
        practice=practice,
        participant=participant,
        config=config,
        geometry=geometry,
        params=params,
        ticks=ticks,
        outcome=outcome,
        wait_end_tick=wait_end,
        cross_end_tick=cross_end,
    )


class ReplayInputSource:
    """Feeds the inputs recorded in an existing trial log.

    The engine synthesizes grace-tail inputs itself, so the tail entries here
    are simply never consumed.
    """

    def __init__(self, record: TrialRecord):
        self._queue = [(t.inp, t.held) for t in record.ticks[1:]]
        self._pos = 0

    def next_input(self, obs: Observation):
        if self._pos >= len(self._queue):
            raise InputExhausted()
        item = self._queue[self._pos]
        self._pos += 1
        return item


def derive_trial_seed(session_seed: int, condition_index: int, scenario_index: int) -> int:
    ss = np.random.SeedSequence([int(session_seed), condition_index, scenario_index])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SessionPlan:
    """Per-condition successful-crossing targets, in presentation order."""

    targets: tuple[tuple[Condition, int], ...] = (
        (Condition.CONTROL, 10),
        (Condition.DISTRACTED, 10),
        (Condition.DISTRACTED_LED, 10),
    )

    @classmethod
    def from_counts(cls, counts: dict[Condition, int]) -> "SessionPlan":
        return cls(tuple((c, counts[c]) for c in CONDITION_ORDER if counts.get(c, 0) > 0))

    def to_dict(self) -> dict:
        return {cond.value: n for cond, n in self.targets}


class SessionTracker:
    """Walks a session plan: which scenario is next, and with which seed.

    A failed or timed-out scenario is re-presented with the same seed until it
    succeeds; the attempt counter lets the caller vary agent randomness.
    """

    def __init__(self, plan: SessionPlan, session_seed: int):
        self.plan = plan
        self.session_seed = session_seed
        self.block = 0
        self.successes = 0
        self.attempt = 0
        self.failures = 0
        self.timeouts = 0

    @property
    def complete(self) -> bool:
        return self.block >= len(self.plan.targets)

    def next_trial(self) -> tuple[Condition, int, int, int]:
        """Return (condition, scenario_index, attempt, trial_seed)."""
        if self.complete:
            raise SessionAbortError("session plan already complete")
        condition, _target = self.plan.targets[self.block]
        cond_index = CONDITION_ORDER.index(condition)
        seed = derive_trial_seed(self.session_seed, cond_index, self.successes)
        return condition, self.successes, self.attempt, seed

    def record(self, outcome: TrialOutcome) -> None:
        if outcome.status is OutcomeStatus.SUCCESS:
            self.successes += 1
            self.attempt = 0
            self.failures = 0
            self.timeouts = 0
            if self.successes >= self.plan.targets[self.block][1]:
                self.block += 1
                self.successes = 0
        else:
            # streaks, not cumulative counts: the latest outcome kind drives
            # how the next presentation is approached
            self.attempt += 1
            if outcome.status is OutcomeStatus.FAILED:
                self.failures += 1
                self.timeouts = 0
            else:
                self.timeouts += 1
                self.failures = 0


@dataclass
class SessionRecord:
    seed: int
    plan: SessionPlan
    participant: Optional[ParticipantMeta]
    trials: list[TrialRecord] = field(default_factory=list)

    def tallies(self) -> dict[str, int]:
        out = {s.value: 0 for s in OutcomeStatus}
        for t in self.trials:
            out[t.outcome.status.value] += 1
        return out


InputSourceFactory = Callable[..., InputSource]


def run_session(
    config: TrafficConfig,
    geometry: RoadGeometry,
    plan: SessionPlan,
    input_source_factory: InputSourceFactory,
    seed: int,
    *,
    participant: Optional[ParticipantMeta] = None,
    params: EngineParams = EngineParams(),
    budget: int = 200,
) -> SessionRecord:
    """Run trials until every condition hits its success target.

    input_source_factory(condition, trial_seed, attempt, failures, timeouts)
    builds a fresh input source per presentation; the failure and timeout
    streaks let synthetic participants adapt to a re-presented scenario.
    """
    tracker = SessionTracker(plan, seed)
    session = SessionRecord(seed=seed, plan=plan, participant=participant)
    while not tracker.complete:
        if len(session.trials) >= budget:
            raise SessionAbortError(
                f"trial budget of {budget} exhausted with plan incomplete "
                f"(tallies {session.tallies()})"
            )
        condition, scenario, attempt, trial_seed = tracker.next_trial()
        source = input_source_factory(
            condition, trial_seed, attempt, tracker.failures, tracker.timeouts
        )
        record = run_trial(
            config,
            geometry,
            condition,
            source,
            trial_seed,
            trial_id=f"trial_{len(session.trials):04d}",
            participant=participant,
            params=params,
        )
        session.trials.append(record)
        tracker.record(record.outcome)
    return session
