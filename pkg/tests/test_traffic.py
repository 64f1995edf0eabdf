from __future__ import annotations

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossing_lab.traffic import (
    FORCED_GAP_WINDOW,
    PED_RADIUS,
    TICK_RATE,
    ArrivalSchedule,
    RoadGeometry,
    SimulationIntegrityError,
    TrafficConfig,
    TrafficWorld,
    VehicleState,
    _yield_required,
    car_following_accel,
    detect_collision,
    generate_arrival_schedule,
    generate_preroll,
    measured_gap,
    pedestrian_zone_window,
    yield_decision,
)
from crossing_lab.trial import PedestrianState

DT = 1.0 / TICK_RATE


# ---------------------------------------------------------------------------
# arrival schedule
# ---------------------------------------------------------------------------

class TestArrivalSchedule:
    def test_sample_mean_near_configured(self, config):
        schedule = generate_arrival_schedule(config, 50_000.0, seed=7)
        headways = np.array(schedule.headways())
        mask = np.ones(len(headways), dtype=bool)
        mask[list(schedule.forced_gap_indices)] = False
        assert len(headways) >= 10_000
        assert abs(headways[mask].mean() - config.mean_headway) / config.mean_headway < 0.05

    def test_forced_gaps_exact_and_early(self, config):
        for seed in range(50):
            schedule = generate_arrival_schedule(config, 60.0, seed=seed)
            headways = schedule.headways()
            forced = [headways[i] for i in schedule.forced_gap_indices]
            assert sorted(forced) == [5.0, 7.0]
            for i in schedule.forced_gap_indices:
                start = schedule.spawn_times[i]
                assert start + headways[i] <= 60.0

    def test_determinism(self, config):
        a = generate_arrival_schedule(config, 300.0, seed=123)
        b = generate_arrival_schedule(config, 300.0, seed=123)
        assert a == b

    def test_different_seeds_differ(self, config):
        a = generate_arrival_schedule(config, 300.0, seed=1)
        b = generate_arrival_schedule(config, 300.0, seed=2)
        assert a.spawn_times != b.spawn_times

    def test_bad_horizon(self, config):
        with pytest.raises(ValueError):
            generate_arrival_schedule(config, 0.0)
        with pytest.raises(ValueError):
            generate_arrival_schedule(config, -5.0)
        with pytest.raises(ValueError):
            generate_arrival_schedule(config, 30.0)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_schedule_invariants(self, seed):
        config = TrafficConfig()
        schedule = generate_arrival_schedule(config, 120.0, seed=seed)
        times = schedule.spawn_times
        assert all(b > a for a, b in zip(times, times[1:]))
        assert all(h >= config.min_headway - 1e-12 for h in schedule.headways())
        i, j = schedule.forced_gap_indices
        assert abs(i - j) >= 2

    def test_headways_follow_shifted_exponential(self, config):
        from scipy import stats

        schedule = generate_arrival_schedule(config, 45_000.0, seed=11)
        headways = np.array(schedule.headways())
        mask = np.ones(len(headways), dtype=bool)
        mask[list(schedule.forced_gap_indices)] = False
        sample = headways[mask][:10_000]
        shift = config.min_headway
        scale = config.mean_headway - shift
        result = stats.kstest(sample, lambda x: 1.0 - np.exp(-(x - shift) / scale))
        assert result.pvalue > 0.01

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrafficConfig(min_headway=5.0)
        with pytest.raises(ValueError):
            TrafficConfig(forced_safe_gaps=(3.0, 7.0))
        with pytest.raises(ValueError):
            TrafficConfig(tick_dt=0.0)

    def test_config_json_round_trip(self, config):
        assert TrafficConfig.from_dict(config.to_dict()) == config
        geo = RoadGeometry()
        assert RoadGeometry.from_dict(geo.to_dict()) == geo


class TestMeasuredGap:
    def test_basics(self):
        schedule = ArrivalSchedule(spawn_times=(0.0, 4.0, 9.0), forced_gap_indices=())
        assert measured_gap(schedule, 1) == 5.0
        assert measured_gap(schedule, 0) == 4.0

    def test_out_of_range(self):
        schedule = ArrivalSchedule(spawn_times=(0.0, 4.0), forced_gap_indices=())
        assert measured_gap(schedule, 0) == 4.0
        with pytest.raises(ValueError):
            measured_gap(schedule, 1)
        with pytest.raises(ValueError):
            measured_gap(schedule, -1)

    def test_generated_schedule_exact_values(self, config):
        schedule = generate_arrival_schedule(config, 60.0, seed=3)
        gaps = sorted(measured_gap(schedule, i) for i in schedule.forced_gap_indices)
        assert gaps == [5.0, 7.0]


# ---------------------------------------------------------------------------
# car following
# ---------------------------------------------------------------------------

class TestCarFollowing:
    def test_free_road_from_rest(self, config):
        veh = VehicleState(0, 0.0, 0.0, 0.0, 0.0)
        assert car_following_accel(veh, None, config) == pytest.approx(config.a_max)

    def test_free_road_at_desired_speed(self, config):
        veh = VehicleState(0, 0.0, config.v_max, 0.0, 0.0)
        assert abs(car_following_accel(veh, None, config)) <= 1e-9

    def test_equilibrium_behind_stopped_leader(self, config):
        # net gap exactly idm_min_spacing at rest: closed-form IDM gives zero
        leader = VehicleState(0, 10.0, 0.0, 0.0, 0.0)
        follower = VehicleState(1, 10.0 - leader.length - config.idm_min_spacing, 0.0, 0.0, 0.0)
        assert car_following_accel(follower, leader, config) == pytest.approx(0.0, abs=1e-6)

    def test_matches_scalar_idm_evaluation(self, config):
        # independent scalar evaluation of the IDM formula
        rng = np.random.default_rng(0)
        for _ in range(200):
            v = float(rng.uniform(0, config.v_max))
            lv = float(rng.uniform(0, config.v_max))
            gap = float(rng.uniform(0.5, 80.0))
            leader = VehicleState(0, 50.0, lv, 0.0, 0.0)
            follower = VehicleState(1, 50.0 - leader.length - gap, v, 0.0, 0.0)
            s_star = config.idm_min_spacing + max(
                0.0,
                v * config.idm_time_headway
                + v * (v - lv) / (2.0 * math.sqrt(config.a_max * config.b_comf)),
            )
            expected = config.a_max * (
                1.0 - (v / config.v_max) ** 4 - (s_star / gap) ** 2
            )
            expected = min(max(expected, -config.b_max), config.a_max)
            assert car_following_accel(follower, leader, config) == pytest.approx(expected)

    def test_overlap_raises(self, config):
        leader = VehicleState(0, 0.0, 5.0, 0.0, 0.0)
        follower = VehicleState(1, -leader.length + 0.5, 5.0, 0.0, 0.0)
        with pytest.raises(SimulationIntegrityError):
            car_following_accel(follower, leader, config)

    def test_clamped_to_b_max(self, config):
        leader = VehicleState(0, 0.0, 0.0, 0.0, 0.0)
        follower = VehicleState(1, -leader.length - 0.05, config.v_max, 0.0, 0.0)
        assert car_following_accel(follower, leader, config) == -config.b_max

    def test_free_vehicle_reaches_v_max(self, config):
        veh = VehicleState(0, 0.0, 0.0, 0.0, 0.0)
        for _ in range(round(60 * TICK_RATE)):
            a = car_following_accel(veh, None, config)
            veh.v = min(max(veh.v + a * DT, 0.0), config.v_max)
        assert veh.v == pytest.approx(config.v_max, abs=1e-6)


# ---------------------------------------------------------------------------
# yielding
# ---------------------------------------------------------------------------

class TestYieldDecision:
    def test_pedestrian_on_curb(self, config, geometry):
        veh = VehicleState(0, -20.0, 10.0, 0.0, 0.0)
        ped = PedestrianState(y=0.0, speed=0.0)
        assert yield_decision(veh, ped, geometry, config) is None

    def test_stop_at_line_deceleration(self, config, geometry):
        # constant-deceleration kinematics: stop at the standoff point
        # idm_min_spacing short of the near edge
        veh = VehicleState(0, -20.0, 10.0, 0.0, 0.0)
        ped = PedestrianState(y=geometry.lane_center_y, speed=0.0)
        stop_dist = geometry.zone_x_min - config.idm_min_spacing - veh.x
        expected = veh.v**2 / (2.0 * stop_dist)
        result = yield_decision(veh, ped, geometry, config)
        assert result == pytest.approx(expected)
        assert result == pytest.approx(2.5, rel=0.15)  # approximately v^2/(2*20)

    def test_pedestrian_past_lane(self, config, geometry):
        veh = VehicleState(0, -20.0, 10.0, 0.0, 0.0)
        ped = PedestrianState(y=geometry.crossing_length, speed=1.0)
        assert yield_decision(veh, ped, geometry, config) is None

    def test_vehicle_clears_before_pedestrian_arrives(self, config, geometry):
        # vehicle 2 m from the zone at full speed clears it (rear past the far
        # edge) at (2 + 2.5 + 4.5) / 13.89 = 0.65 s; a slow pedestrian reaches
        # the lane band at 0.5 / 0.6 = 0.83 s, so the windows are disjoint
        veh = VehicleState(0, -2.0, config.v_max, 0.0, 0.0)
        ped = PedestrianState(y=0.0, speed=0.6)
        assert yield_decision(veh, ped, geometry, config) is None

    def test_stopped_vehicle_held(self, config, geometry):
        veh = VehicleState(0, -3.0, 0.0, 0.0, 0.0)
        ped = PedestrianState(y=geometry.lane_center_y, speed=0.0)
        assert yield_decision(veh, ped, geometry, config) == 0.0

    def test_vehicle_inside_zone_never_stops(self, config, geometry):
        veh = VehicleState(0, geometry.zone_x_min + 0.5, 8.0, 0.0, 0.0)
        ped = PedestrianState(y=geometry.lane_center_y, speed=0.0)
        assert yield_decision(veh, ped, geometry, config) is None

    def test_emergency_braking_when_past_standoff(self, config, geometry):
        veh = VehicleState(0, -config.idm_min_spacing / 2, 10.0, 0.0, 0.0)
        ped = PedestrianState(y=geometry.lane_center_y, speed=0.0)
        assert yield_decision(veh, ped, geometry, config) == config.b_max


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def _world(config, geometry, seed=0, horizon=60.0):
    schedule = generate_arrival_schedule(config, horizon, seed=seed)
    return TrafficWorld(config, geometry, schedule)


class TestStepTraffic:
    def test_inline_step_matches_reference_functions(self, config, geometry):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(1, 6))
            xs = np.sort(rng.uniform(-70, 30, n))[::-1]
            vehicles = [
                VehicleState(i, float(xs[i]), float(rng.uniform(0, config.v_max)), 0.0, 0.0)
                for i in range(n)
            ]
            for i in range(1, n):
                limit = vehicles[i - 1].x - vehicles[i - 1].length
                if vehicles[i].x > limit:
                    vehicles[i].x = limit - float(rng.uniform(0.1, 2.0))
            ped = PedestrianState(
                y=float(rng.uniform(0, 5)),
                speed=float(rng.choice([0.0, float(rng.uniform(0.1, 2.0))])),
            )
            world = TrafficWorld(config, geometry, ArrivalSchedule((), ()), ())
            world.vehicles = [VehicleState(v.id, v.x, v.v, v.a, 0.0) for v in vehicles]
            world.step(0, ped)
            window = pedestrian_zone_window(ped, geometry)
            leader = None
            for before, after in zip(vehicles, world.vehicles):
                expected = car_following_accel(before, leader, config)
                required = _yield_required(before, window, geometry, config)
                if required is not None and -required < expected:
                    expected = -required
                expected = min(max(expected, -config.b_max), config.a_max)
                assert after.a == expected
                leader = before

    def test_blocked_zone_brings_traffic_to_rest(self, config, geometry):
        world = _world(config, geometry, seed=5)
        ped = PedestrianState(y=geometry.lane_center_y, speed=0.0)
        for k in range(1, round(60 * TICK_RATE) + 1):
            world.step(k, ped)
            for veh in world.vehicles:
                assert veh.x <= geometry.zone_x_min + 1e-9
        assert world.vehicles, "queue should have formed"
        assert all(abs(v.v) < 0.3 for v in world.vehicles)

    def test_one_second_headway_pair_never_overlaps(self, config, geometry):
        schedule = ArrivalSchedule(spawn_times=(0.0, 1.0), forced_gap_indices=())
        world = TrafficWorld(config, geometry, schedule)
        ped = PedestrianState()
        for k in range(1, round(60 * TICK_RATE) + 1):
            world.step(k, ped)
            if len(world.vehicles) == 2:
                lead, follow = world.vehicles
                assert lead.x - lead.length - follow.x >= 0.0

    def test_spawn_staggers_upstream_when_entry_occupied(self, config, geometry):
        schedule = ArrivalSchedule(spawn_times=(0.0, 1.0), forced_gap_indices=())
        world = TrafficWorld(config, geometry, schedule)
        ped = PedestrianState()
        for k in range(1, 61):
            world.step(k, ped)
        assert len(world.vehicles) == 2
        lead, follow = world.vehicles
        assert follow.x < -geometry.vehicle_entry_offset

    def test_despawn_past_boundary(self, config, geometry):
        schedule = ArrivalSchedule(spawn_times=(0.0,), forced_gap_indices=())
        world = TrafficWorld(config, geometry, schedule)
        ped = PedestrianState()
        despawned = []
        for k in range(1, round(30 * TICK_RATE)):
            despawned += world.step(k, ped).despawned
            if despawned:
                break
        assert despawned == [0]
        assert not world.vehicles

    def test_determinism_bit_identical(self, config, geometry):
        states = []
        for _ in range(2):
            world = _world(config, geometry, seed=21)
            ped = PedestrianState(y=0.0, speed=0.0)
            trace = []
            for k in range(1, 1200):
                world.step(k, ped)
                trace.append(tuple((v.id, v.x, v.v, v.a) for v in world.vehicles))
            states.append(trace)
        assert states[0] == states[1]

    def test_preroll_populates_road(self, config, geometry):
        preroll = generate_preroll(config, 20.0, seed=9)
        assert preroll and all(t < 0 for t in preroll)
        schedule = generate_arrival_schedule(config, 60.0, seed=9)
        warm = round(20 * TICK_RATE)
        world = TrafficWorld(config, geometry, schedule, preroll=preroll, start_tick=-warm)
        ped = PedestrianState()
        for k in range(-warm + 1, 1):
            world.step(k, ped)
        assert any(v.x > -30.0 for v in world.vehicles)

    def test_entry_offset_validates_stopping_distance(self, config):
        with pytest.raises(ValueError):
            TrafficWorld(
                config,
                RoadGeometry(vehicle_entry_offset=20.0),
                ArrivalSchedule((), ()),
            )


# ---------------------------------------------------------------------------
# collision detection
# ---------------------------------------------------------------------------

class TestDetectCollision:
    def test_pedestrian_on_curb(self, geometry):
        ped = PedestrianState(y=0.0)
        veh = VehicleState(0, geometry.ped_path_x + 2.0, 10.0, 0.0, 0.0)
        assert not detect_collision(veh, ped, geometry)

    def test_centres_coincide(self, geometry):
        ped = PedestrianState(y=geometry.lane_center_y)
        veh = VehicleState(0, geometry.ped_path_x + 2.0, 10.0, 0.0, 0.0)
        assert detect_collision(veh, ped, geometry)

    def test_tangency_is_not_collision(self, geometry):
        # disc centre exactly one radius from the vehicle's side
        veh = VehicleState(0, geometry.ped_path_x + 2.0, 0.0, 0.0, 0.0)
        side = geometry.lane_center_y + veh.width / 2.0
        ped = PedestrianState(y=side + PED_RADIUS)
        assert not detect_collision(veh, ped, geometry)
        ped_inside = PedestrianState(y=side + PED_RADIUS - 1e-9)
        assert detect_collision(veh, ped_inside, geometry)

    def test_longitudinal_miss(self, geometry):
        ped = PedestrianState(y=geometry.lane_center_y)
        behind = VehicleState(0, geometry.ped_path_x - PED_RADIUS - 0.01, 0.0, 0.0, 0.0)
        assert not detect_collision(behind, ped, geometry)
