"""Single-lane road simulation: arrivals, car following, yielding, collisions.

Axes: vehicles travel along x in meters, increasing downstream, with the
conflict-zone near edge at x = 0. The pedestrian path runs along y from the
near curb (y = 0) to the far curb (y = crossing_length). The conflict zone is
the rectangle where the crosswalk overlaps the vehicle lane. All quantities
are SI; the clock advances on a fixed tick grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Protocol, Sequence

import numpy as np

TICK_RATE = 60.0

VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 1.8
PED_RADIUS = 0.25

# m past the conflict-zone far edge before a vehicle leaves the simulation
DESPAWN_CLEARANCE = 30.0
# free road required downstream of the entry point before a spawn is released
SPAWN_CLEAR_GAP = 2.0
# drivers resume only once the pedestrian is clearly past the lane, m
YIELD_EXIT_CLEARANCE = 0.75
# forced safe gaps must begin this early (spawn time) so the crossing
# opportunity they create fits inside a 60 s trial
FORCED_GAP_WINDOW = 35.0


class SimulationIntegrityError(RuntimeError):
    """Physically impossible state (vehicle overlap); indicates an engine bug."""


class PedestrianLike(Protocol):
    y: float
    speed: float


@dataclass(frozen=True)
class RoadGeometry:
    """Crosswalk layout. The lane band is centred on the pedestrian path."""

    crossing_length: float = 5.0      # pedestrian path, curb to curb
    crosswalk_width: float = 2.5      # extent along the vehicle travel axis
    lane_width: float = 3.5           # vehicle corridor on the pedestrian axis
    vehicle_entry_offset: float = 60.0  # spawn distance upstream of the near edge

    def __post_init__(self):
        if self.crossing_length <= 0 or self.crosswalk_width <= 0:
            raise ValueError("crossing_length and crosswalk_width must be positive")
        if self.lane_width > self.crossing_length:
            raise ValueError("conflict zone must fit inside the crossing")

    @property
    def zone_x_min(self) -> float:
        return 0.0

    @property
    def zone_x_max(self) -> float:
        return self.crosswalk_width

    @property
    def zone_y_min(self) -> float:
        return (self.crossing_length - self.lane_width) / 2.0

    @property
    def zone_y_max(self) -> float:
        return self.zone_y_min + self.lane_width

    @property
    def lane_center_y(self) -> float:
        return (self.zone_y_min + self.zone_y_max) / 2.0

    @property
    def ped_path_x(self) -> float:
        return self.crosswalk_width / 2.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RoadGeometry":
        return cls(**d)


@dataclass(frozen=True)
class TrafficConfig:
    """Arrival process and car-following parameters (SI units)."""

    mean_headway: float = 4.0
    forced_safe_gaps: tuple[float, ...] = (5.0, 7.0)
    min_headway: float = 1.0
    v_max: float = 13.89              # 50 km/h
    a_max: float = 2.5
    b_comf: float = 3.0
    b_max: float = 8.0
    idm_time_headway: float = 1.5
    idm_min_spacing: float = 2.0
    seed: int = 0
    tick_dt: float = 1.0 / TICK_RATE

    def __post_init__(self):
        if self.tick_dt <= 0:
            raise ValueError("tick_dt must be positive")
        if not (self.min_headway < self.mean_headway):
            raise ValueError("min_headway must be below mean_headway")
        for g in self.forced_safe_gaps:
            if g <= self.mean_headway:
                raise ValueError("forced gaps must exceed the mean headway")
        for name in ("v_max", "a_max", "b_comf", "b_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["forced_safe_gaps"] = list(self.forced_safe_gaps)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficConfig":
        d = dict(d)
        d["forced_safe_gaps"] = tuple(d.get("forced_safe_gaps", (5.0, 7.0)))
        return cls(**d)


@dataclass(slots=True)
class VehicleState:
    """Longitudinal state of one car; x is the front bumper position."""

    id: int
    x: float
    v: float
    a: float
    spawn_time: float
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH


@dataclass(frozen=True)
class ArrivalSchedule:
    """Spawn instants plus the headway indices holding the forced safe gaps.

    The headway values are canonical (they carry the forced gaps exactly);
    spawn_times is their cumulative sum, first vehicle at t = 0.
    """

    spawn_times: tuple[float, ...]
    forced_gap_indices: tuple[int, ...]
    headway_values: tuple[float, ...] = ()

    def headways(self) -> list[float]:
        if self.headway_values:
            return list(self.headway_values)
        times = self.spawn_times
        return [times[i + 1] - times[i] for i in range(len(times) - 1)]


def generate_arrival_schedule(
    config: TrafficConfig, horizon: float, seed: Optional[int] = None
) -> ArrivalSchedule:
    """Draw the vehicle arrival schedule for one run.

    Headways are the shifted exponential min_headway + Exp(mean - min), the
    standard minimum-separation headway model, which keeps the sample mean at
    the configured value. The forced safe gaps replace two non-adjacent
    headways that begin early enough for the opportunities they create to fit
    inside a 60 s trial. Deterministic given the seed (config.seed unless
    overridden).
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if horizon < 60.0:
        raise ValueError("horizon must cover at least one 60 s trial")

    rng = np.random.default_rng(config.seed if seed is None else seed)
    shift = config.min_headway
    scale = config.mean_headway - shift

    def draw(n: int) -> np.ndarray:
        return shift + rng.exponential(scale, size=n)

    gaps = list(config.forced_safe_gaps)
    for attempt in range(1000):
        headways = list(draw(max(16, int(horizon / config.mean_headway * 1.5) + 8)))
        while sum(headways) < horizon + sum(gaps):
            headways.extend(draw(16))
        starts = np.concatenate([[0.0], np.cumsum(headways[:-1])])
        candidates = [i for i in range(len(headways)) if starts[i] <= FORCED_GAP_WINDOW]
        pairs = [
            (i, j)
            for i in candidates
            for j in candidates
            if abs(i - j) >= 2
        ]
        if pairs:
            break
    else:  # pragma: no cover - the window admits a pair for any realistic draw
        raise RuntimeError("could not place forced gaps")

    i5, i7 = pairs[int(rng.integers(len(pairs)))]
    for idx, gap in zip((i5, i7), gaps):
        headways[idx] = gap

    spawn_times = [0.0]
    kept: list[float] = []
    for h in headways:
        t = spawn_times[-1] + float(h)
        if t > horizon:
            break
        spawn_times.append(t)
        kept.append(float(h))

    forced = tuple(sorted((i5, i7)))
    assert all(i < len(kept) for i in forced)
    return ArrivalSchedule(
        spawn_times=tuple(spawn_times),
        forced_gap_indices=forced,
        headway_values=tuple(kept),
    )


def measured_gap(schedule: ArrivalSchedule, i: int) -> float:
    """Time between consecutive front bumpers passing a fixed point.

    Equals the spawn-time difference: unimpeded vehicles follow one speed
    profile, so the offset is preserved downstream.
    """
    if i < 0 or i + 1 >= len(schedule.spawn_times):
        raise ValueError(f"no headway at index {i}")
    if schedule.headway_values:
        return schedule.headway_values[i]
    return schedule.spawn_times[i + 1] - schedule.spawn_times[i]


def generate_preroll(config: TrafficConfig, warmup: float, seed: int) -> tuple[float, ...]:
    """Arrival instants on [-warmup, 0) extending the process backward in time.

    Used to start a trial with the road already in steady flow; drawn from the
    same headway law under a seed derived from the trial seed.
    """
    if warmup <= 0:
        return ()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    shift = config.min_headway
    scale = config.mean_headway - shift
    times: list[float] = []
    t = 0.0
    while True:
        t -= shift + float(rng.exponential(scale))
        if t < -warmup:
            break
        times.append(t)
    return tuple(reversed(times))


def car_following_accel(
    follower: VehicleState,
    leader: Optional[VehicleState],
    config: TrafficConfig,
) -> float:
    """Intelligent Driver Model acceleration, clamped to [-b_max, a_max].

    Treiber's IDM with the usual max(0, .) guard on the dynamic part of the
    desired gap so a fast-receding leader cannot produce a negative target.
    """
    v = follower.v
    accel = config.a_max * (1.0 - (v / config.v_max) ** 4)
    if leader is not None:
        gap = leader.x - leader.length - follower.x
        if gap < -1e-9:
            raise SimulationIntegrityError(
                f"vehicle {follower.id} overlaps leader {leader.id} (gap {gap:.3f} m)"
            )
        gap = max(gap, 1e-6)
        dv = v - leader.v
        dynamic = v * config.idm_time_headway + v * dv / (
            2.0 * math.sqrt(config.a_max * config.b_comf)
        )
        s_star = config.idm_min_spacing + max(0.0, dynamic)
        accel -= config.a_max * (s_star / gap) ** 2
    return min(max(accel, -config.b_max), config.a_max)


def pedestrian_zone_window(ped: PedestrianLike, geometry: RoadGeometry):
    """Projected interval (seconds from now) the pedestrian claims the lane.

    Constant-speed projection of the disc across the lane band, extended by
    the driver's resume clearance on the far side but never beyond the far
    curb (a pedestrian who reached it is off the road). Returns None when the
    window never opens; a stationary pedestrian inside it blocks indefinitely.
    """
    y_enter = geometry.zone_y_min - PED_RADIUS
    y_exit = min(
        geometry.zone_y_max + PED_RADIUS + YIELD_EXIT_CLEARANCE,
        geometry.crossing_length,
    )
    y = ped.y
    u = ped.speed
    if y >= y_exit:
        return None
    if u <= 0.0:
        if y > y_enter:
            return (0.0, math.inf)
        return None
    t_in = (y_enter - y) / u
    if t_in < 0.0:
        t_in = 0.0
    t_out = (y_exit - y) / u
    return (t_in, t_out)


def _yield_required(
    vehicle: VehicleState,
    window,
    geometry: RoadGeometry,
    config: TrafficConfig,
) -> Optional[float]:
    """Required deceleration (positive, m/s^2) to stop short of the zone, or None.

    Applies when the projected pedestrian occupancy overlaps the vehicle's
    constant-speed traversal window. The stop target sits idm_min_spacing
    upstream of the near edge, the distance the car-following law keeps from
    a standing obstacle there. Vehicles that have already reached the near
    edge clear the zone instead of stopping inside it; a vehicle at rest is
    held (zero required deceleration) while the zone can become occupied.
    """
    if window is None:
        return None
    near = geometry.zone_x_min
    x = vehicle.x
    if x >= near:
        return None
    p_in, p_out = window
    v = vehicle.v
    if v <= 0.0:
        return 0.0
    t_in = (near - x) / v
    t_out = (geometry.zone_x_max + vehicle.length - x) / v
    if t_out < p_in or p_out < t_in:
        return None
    stop_dist = near - config.idm_min_spacing - x
    if stop_dist <= 1e-9:
        return config.b_max
    return min(v * v / (2.0 * stop_dist), config.b_max)


def yield_decision(
    vehicle: VehicleState,
    ped: PedestrianLike,
    geometry: RoadGeometry,
    config: TrafficConfig,
) -> Optional[float]:
    """Deceleration demanded of one vehicle by the crossing pedestrian, if any."""
    return _yield_required(vehicle, pedestrian_zone_window(ped, geometry), geometry, config)


def detect_collision(vehicle: VehicleState, ped: PedestrianLike, geometry: RoadGeometry) -> bool:
    """Strict overlap between the vehicle rectangle and the pedestrian disc.

    Tangency does not count as a collision.
    """
    px = geometry.ped_path_x
    py = ped.y
    dx = max(vehicle.x - vehicle.length - px, px - vehicle.x, 0.0)
    half_w = vehicle.width / 2.0
    lane_c = geometry.lane_center_y
    dy = max(lane_c - half_w - py, py - (lane_c + half_w), 0.0)
    return dx * dx + dy * dy < PED_RADIUS * PED_RADIUS


@dataclass
class StepResult:
    spawned: list[int] = field(default_factory=list)
    despawned: list[int] = field(default_factory=list)
    yield_binding: dict[int, bool] = field(default_factory=dict)


class TrafficWorld:
    """Owns the vehicle fleet of one simulation run and advances it per tick.

    Single-threaded by design: one world per trial, no shared mutable state.
    """

    def __init__(
        self,
        config: TrafficConfig,
        geometry: RoadGeometry,
        schedule: ArrivalSchedule,
        preroll: Sequence[float] = (),
        start_tick: int = 0,
    ):
        stopping = config.v_max ** 2 / (2.0 * config.b_comf)
        if geometry.vehicle_entry_offset <= stopping:
            raise ValueError(
                f"vehicle_entry_offset must exceed the {stopping:.1f} m stopping distance"
            )
        self.config = config
        self.geometry = geometry
        self.schedule = schedule
        self.vehicles: list[VehicleState] = []
        # hot-loop constants; geometry fields are properties, too slow per tick
        self._zone_near = geometry.zone_x_min
        self._zone_far = geometry.zone_x_max
        self._despawn_at = geometry.zone_x_max + DESPAWN_CLEARANCE
        self._y_enter = geometry.zone_y_min - PED_RADIUS
        self._y_exit = min(
            geometry.zone_y_max + PED_RADIUS + YIELD_EXIT_CLEARANCE, geometry.crossing_length
        )
        self._idm_term = 2.0 * math.sqrt(config.a_max * config.b_comf)
        # preroll vehicles carry negative ids; scheduled vehicles their index
        arrivals = [(t, i - len(preroll)) for i, t in enumerate(preroll)]
        arrivals += [(t, i) for i, t in enumerate(schedule.spawn_times)]
        self._spawn_ticks = [math.ceil(t * TICK_RATE - 1e-9) for t, _ in arrivals]
        self._spawn_meta = arrivals
        self._next_spawn = 0
        self._release_spawns(start_tick, StepResult())

    def _release_spawns(self, tick: int, result: StepResult) -> None:
        spawn_x = -self.geometry.vehicle_entry_offset
        while (
            self._next_spawn < len(self._spawn_ticks)
            and self._spawn_ticks[self._next_spawn] <= tick
        ):
            spawn_time, veh_id = self._spawn_meta[self._next_spawn]
            self._next_spawn += 1
            x = spawn_x
            if self.vehicles:
                # arrivals always enter on schedule; when the entry point is
                # occupied the newcomer joins the platoon further upstream
                tail = self.vehicles[-1]
                x = min(x, tail.x - tail.length - SPAWN_CLEAR_GAP)
            self.vehicles.append(
                VehicleState(id=veh_id, x=x, v=0.0, a=0.0, spawn_time=spawn_time)
            )
            result.spawned.append(veh_id)

    def step(self, tick: int, ped: PedestrianLike) -> StepResult:
        """Advance one tick: spawn, decide accelerations, integrate, despawn.

        The per-vehicle math below inlines car_following_accel and
        _yield_required verbatim (same expressions, same order) so the public
        functions remain the bit-exact reference; test_traffic checks parity.
        """
        result = StepResult()
        self._release_spawns(tick, result)
        config = self.config
        a_max = config.a_max
        b_max = config.b_max
        v_max = config.v_max
        s0 = config.idm_min_spacing
        headway_t = config.idm_time_headway
        idm_term = self._idm_term
        near = self._zone_near

        # projected lane-claim window of the pedestrian (inlined)
        py = ped.y
        pu = ped.speed
        if py >= self._y_exit:
            window = None
        elif pu <= 0.0:
            window = (0.0, math.inf) if py > self._y_enter else None
        else:
            t_in = (self._y_enter - py) / pu
            window = (t_in if t_in > 0.0 else 0.0, (self._y_exit - py) / pu)

        # accelerations from the common pre-step snapshot
        leader: Optional[VehicleState] = None
        accels: list[float] = []
        binding_map = result.yield_binding
        for veh in self.vehicles:
            v = veh.v
            a = a_max * (1.0 - (v / v_max) ** 4)
            if leader is not None:
                gap = leader.x - leader.length - veh.x
                if gap < -1e-9:
                    raise SimulationIntegrityError(
                        f"vehicle {veh.id} overlaps leader {leader.id} (gap {gap:.3f} m)"
                    )
                if gap < 1e-6:
                    gap = 1e-6
                dynamic = v * headway_t + v * (v - leader.v) / idm_term
                s_star = s0 + (dynamic if dynamic > 0.0 else 0.0)
                a -= a_max * (s_star / gap) ** 2
            if a < -b_max:
                a = -b_max
            elif a > a_max:
                a = a_max

            binding = False
            x = veh.x
            if window is not None and x < near:
                required = None
                if v <= 0.0:
                    required = 0.0
                else:
                    t_in = (near - x) / v
                    t_out = (self._zone_far + veh.length - x) / v
                    if not (t_out < window[0] or window[1] < t_in):
                        stop_dist = near - s0 - x
                        if stop_dist <= 1e-9:
                            required = b_max
                        else:
                            req = v * v / (2.0 * stop_dist)
                            required = req if req < b_max else b_max
                if required is not None and -required < a:
                    a = -required
                    binding = True
            binding_map[veh.id] = binding
            accels.append(a)
            leader = veh

        dt = config.tick_dt
        for veh, a in zip(self.vehicles, accels):
            v = veh.v + a * dt
            if v < 0.0:
                v = 0.0
            elif v > v_max:
                v = v_max
            veh.a = a
            veh.v = v
            veh.x += v * dt

        while self.vehicles and self.vehicles[0].x - self.vehicles[0].length > self._despawn_at:
            result.despawned.append(self.vehicles.pop(0).id)

        for i in range(1, len(self.vehicles)):
            lead = self.vehicles[i - 1]
            gap = lead.x - lead.length - self.vehicles[i].x
            if gap < -1e-9:
                raise SimulationIntegrityError(
                    f"overlap after step {tick}: vehicles {lead.id} and "
                    f"{self.vehicles[i].id} (gap {gap:.4f} m)"
                )
        return result
