"""Tests for vehicle physics, race events and the race loop."""

import json
from dataclasses import replace

import numpy as np
import pytest

from oval_racer.control import Commands
from oval_racer.metrics import overtakes, safety_report, summarize
from oval_racer.simulation import (
    TICK_COLUMNS,
    RaceEvent,
    RaceLog,
    RaceSimulator,
    SimParams,
    VehicleState,
    run_race,
    slipstream_factor,
    step_vehicle,
    write_race_log,
)

SHORT = SimParams(lap_time_limit=0.5)


def at(track, vid, station, offset=7.0, v=50.0, lap=0):
    x, y, heading = track.points_at(station, offset)
    return VehicleState(vid, float(x), float(y), float(heading), v,
                        station=station, offset=offset, lap=lap)


@pytest.fixture
def pair(track, raceline):
    return RaceSimulator(track, raceline, 2, 1, seed=0, sim=SHORT)


class TestStepVehicle:
    """Tests for the single-vehicle integrator."""

    def test_full_throttle(self, vehicle):
        """Full throttle integrates drive minus drag."""
        state = VehicleState(0, 0.0, 0.0, 0.0, 50.0)
        moved, saturated = step_vehicle(state, Commands(0.0, 1.0), vehicle)
        expected = 50.0 + (float(vehicle.drive_force(50.0)) - vehicle.drag * 2500.0) / 750.0 * 0.01
        assert moved.v == pytest.approx(expected)
        assert moved.x == pytest.approx(expected * 0.01)
        assert not saturated

    def test_braking(self, vehicle):
        """Braking slows at least by the brake force."""
        state = VehicleState(0, 0.0, 0.0, 0.0, 50.0)
        moved, _ = step_vehicle(state, Commands(0.0, -1.0), vehicle)
        assert moved.v < 50.0 - vehicle.brake_force / vehicle.mass * 0.01 + 1e-9

    def test_stopped_car_stays_stopped(self, vehicle):
        """Speed never goes negative."""
        moved, _ = step_vehicle(VehicleState(0, 0.0, 0.0, 0.0, 0.0), Commands(0.0, -1.0), vehicle)
        assert moved.v == 0.0

    def test_slipstream_reduces_drag(self, vehicle):
        """A drafting car gains more speed."""
        state = VehicleState(0, 0.0, 0.0, 0.0, 80.0)
        free, _ = step_vehicle(state, Commands(0.0, 1.0), vehicle, slip_factor=1.0)
        drafting, _ = step_vehicle(state, Commands(0.0, 1.0), vehicle, slip_factor=0.75)
        assert drafting.v > free.v

    def test_steering_is_yaw_acceleration(self, vehicle):
        """Steering changes yaw rate, not heading directly."""
        moved, saturated = step_vehicle(
            VehicleState(0, 0.0, 0.0, 0.0, 50.0), Commands(1.0, 0.0), vehicle
        )
        assert moved.omega == pytest.approx(vehicle.yaw_accel_max * 0.01)
        assert moved.heading == pytest.approx(moved.omega * 0.01)
        assert not saturated

    def test_yaw_rate_saturates(self, vehicle):
        """Yaw rate is clipped to the lateral limit."""
        state = VehicleState(0, 0.0, 0.0, 0.0, 50.0, omega=1.0)
        moved, saturated = step_vehicle(state, Commands(0.0, 0.0), vehicle)
        assert saturated
        assert moved.v * moved.omega == pytest.approx(float(vehicle.a_lat_max(moved.v)))

    def test_cornering_costs_speed(self, vehicle):
        """Turning costs speed."""
        straight, _ = step_vehicle(VehicleState(0, 0.0, 0.0, 0.0, 70.0), Commands(), vehicle)
        turning, _ = step_vehicle(
            VehicleState(0, 0.0, 0.0, 0.0, 70.0, omega=0.2), Commands(), vehicle
        )
        assert turning.v < straight.v


class TestSlipstream:
    """Tests for the drafting kernel."""

    @pytest.mark.parametrize(
        ("gaps", "lateral", "expected"),
        [
            ([], [], 1.0),
            ([0.0], [0.0], 0.75),
            ([15.0], [0.0], 0.875),
            ([15.0], [1.0], 0.9375),
            ([-5.0], [0.0], 1.0),
            ([40.0], [0.0], 1.0),
            ([10.0], [2.5], 1.0),
            ([25.0, 5.0], [0.0, 1.0], 1.0 - 0.25 * (25.0 / 30.0) * 0.5),
        ],
    )
    def test_factor(self, gaps, lateral, expected):
        """Slipstream factor for sample gaps."""
        assert slipstream_factor(np.array(gaps), np.array(lateral), SimParams()) == pytest.approx(
            expected
        )


class TestStartingGrid:
    """Tests for the rolling start."""

    def test_single_file_on_race_line(self, track, raceline, reference):
        """Cars line up one grid spacing apart at race-line speed."""
        sim = RaceSimulator(track, raceline, 3, 1, seed=0, sim=SHORT)
        stations = sorted(v.station for v in sim.world.vehicles)
        length = track.total_length
        assert stations == pytest.approx([0.0, length - 40.0, length - 20.0])
        for v in sim.world.vehicles:
            assert v.v == pytest.approx(float(reference.speed_at(v.station)))
            assert v.offset == pytest.approx(float(reference.offset_at(v.station)))
            assert v.lap == (0 if v.station == 0.0 else -1)

    def test_fixed_start_speed(self, track, raceline):
        """An explicit start speed applies to every slot."""
        sim = RaceSimulator(track, raceline, 3, 1, sim=SimParams(start_speed=27.8))
        assert [v.v for v in sim.world.vehicles] == pytest.approx([27.8] * 3)

    def test_grid_starts_inside_slipstream(self, track, raceline):
        """Every car but the leader begins in the draft of the car ahead."""
        sim = RaceSimulator(track, raceline, 4, 1, seed=2, sim=SHORT)
        factors = sim._slip_factors()
        assert sorted(f < 1.0 for f in factors) == [False, True, True, True]

    def test_seed_shuffles_slots(self, track, raceline):
        """Different seeds give different grid orders."""
        orders = {
            tuple(v.station for v in RaceSimulator(track, raceline, 4, 1, seed=s,
                                                   sim=SHORT).world.vehicles)
            for s in range(6)
        }
        assert len(orders) > 1

    def test_same_seed_same_grid(self, track, raceline):
        """The same seed gives the same grid."""
        a = RaceSimulator(track, raceline, 4, 1, seed=7, sim=SHORT).world.vehicles
        b = RaceSimulator(track, raceline, 4, 1, seed=7, sim=SHORT).world.vehicles
        assert a == b

    def test_invalid_sizes(self, track, raceline):
        """Vehicle and lap counts must be positive."""
        with pytest.raises(ValueError):
            RaceSimulator(track, raceline, 0, 1)
        with pytest.raises(ValueError):
            RaceSimulator(track, raceline, 2, 0)

    def test_sensor_range(self, track, raceline):
        """Snapshots only include cars in sensor range."""
        sim = RaceSimulator(track, raceline, 3, 1, sim=SimParams(sensor_range=30.0))
        front = next(v.vehicle_id for v in sim.world.vehicles if v.station == 0.0)
        assert len(sim.snapshot(front).opponents) == 1


class TestEvents:
    """Tests for lap, contact, boundary and overtake detection."""

    def test_lap_crossing_interpolated(self, track, raceline):
        """Lap time is interpolated inside the tick."""
        sim = RaceSimulator(track, raceline, 1, 1, sim=SHORT)
        before = at(track, 0, track.total_length - 1.0)
        after = at(track, 0, 1.0)
        crossed = sim._update_station(before, after, 10.0)
        assert crossed.lap == 1
        (event,) = sim.log.events_of("lap")
        assert event.t == pytest.approx(10.005)
        assert event.data["lap"] == 1
        assert event.data["lap_time"] == pytest.approx(10.005)
        assert event.data["start_time"] == 0.0

    def test_grid_crossing_is_not_a_lap(self, track, raceline):
        """Crossing from the grid starts lap zero."""
        sim = RaceSimulator(track, raceline, 1, 1, sim=SHORT)
        before = at(track, 0, track.total_length - 1.0, lap=-1)
        assert sim._update_station(before, at(track, 0, 1.0), 3.0).lap == 0
        assert sim.log.events_of("lap") == []

    def test_collision_edge_triggered(self, pair, track):
        """A lasting overlap is one collision event."""
        pair.world.vehicles = [at(track, 0, 100.0), at(track, 1, 103.0)]
        pair._check_contacts(1.0)
        pair._check_contacts(1.01)
        (event,) = pair.log.events_of("collision")
        assert event.vehicles == [0, 1]

    def test_later_contacts_still_logged(self, track, raceline):
        """Cars that touched once keep reporting new contacts, with anyone."""
        sim = RaceSimulator(track, raceline, 3, 1, seed=0, sim=SHORT)
        far = at(track, 2, 900.0)
        sim.world.vehicles = [at(track, 0, 100.0), at(track, 1, 103.0), far]
        sim._check_contacts(1.0)
        sim.world.vehicles = [at(track, 0, 500.0), at(track, 1, 300.0), far]
        sim._check_contacts(10.0)
        sim.world.vehicles = [at(track, 0, 900.0, offset=8.0), at(track, 1, 300.0), far]
        sim._check_contacts(20.0)
        sim.world.vehicles = [at(track, 0, 100.0), at(track, 1, 103.0), far]
        sim._check_contacts(30.0)
        events = [(e.t, e.vehicles) for e in sim.log.events_of("collision")]
        assert events == [(1.0, [0, 1]), (20.0, [0, 2]), (30.0, [0, 1])]

    def test_bound_overlap_without_contact(self, pair, track):
        """Overlapping bounds log bound_overlap, not collision."""
        pair.world.vehicles = [at(track, 0, 100.0), at(track, 1, 107.0)]
        pair._check_contacts(1.0)
        assert pair.log.events_of("collision") == []
        (event,) = pair.log.events_of("bound_overlap")
        assert event.data["gap"] == pytest.approx(2.0)

    def test_boundary_and_saturation(self, pair, track):
        """Boundary and saturation events log once per episode."""
        off = replace(at(track, 0, 100.0), offset=-0.5)
        pair._check_vehicle(off, True, 2.0)
        pair._check_vehicle(off, True, 2.01)
        assert len(pair.log.events_of("boundary")) == 1
        assert len(pair.log.events_of("lat_sat")) == 1

    def test_overtake(self, pair, track):
        """A position swap logs an overtake."""
        pair.world.vehicles = [at(track, 0, 115.0), at(track, 1, 112.0)]
        pair._check_overtakes([100.0, 110.0], 5.0)
        (event,) = pair.log.events_of("overtake")
        assert event.vehicles == [0, 1]


class TestRaceLog:
    """Tests for tick and event files."""

    def test_write(self, tmp_path):
        """Ticks and events are written to disk."""
        log = RaceLog(1000.0)
        log.ticks.append((0.04, 1, 1.0, 2.0, 0.5, 80.0, 0.0, 12.5, 0, 1.0, -0.25, 0.875))
        log.events.append(RaceEvent(t=1.5, type="lap", vehicles=[1], data={"lap_time": 50.0}))
        paths = write_race_log(log, tmp_path / "run")
        lines = paths["ticks"].read_text().splitlines()
        assert lines[0] == ",".join(TICK_COLUMNS)
        assert lines[1].startswith("0.040000,1,1.000000,")
        event = json.loads(paths["events"].read_text())
        assert event["type"] == "lap"
        assert log.lap_times() == {1: [50.0]}


class TestRace:
    """Tests for the race loop."""

    def test_time_limit_stops_race(self, track, raceline):
        """The time limit ends the race."""
        log = run_race(track, raceline, 2, 1, seed=0, sim=SHORT)
        cycles = {row[0] for row in log.ticks}
        assert log.finish_time == pytest.approx(1.0, abs=0.011)
        assert len(cycles) in (25, 26)
        assert len(log.ticks) == 2 * len(cycles)
        assert {row[1] for row in log.ticks} == {0, 1}

    def test_cars_move_forward(self, track, raceline):
        """Cars make progress."""
        log = run_race(track, raceline, 1, 1, sim=SHORT)
        first, last = log.ticks[0], log.ticks[-1]
        assert last[7] > first[7] + 20.0

    def test_debug_sink_records_plans(self, track, raceline):
        """The debug sink receives planner records."""
        records = []
        log = run_race(track, raceline, 1, 1, sim=SimParams(lap_time_limit=0.1),
                       debug_sink=records.append)
        assert len(records) == len(log.ticks)
        assert records[0]["vehicle_id"] == 0
        assert len(records[0]["candidates"]) == 8

    def test_deterministic(self, track, raceline):
        """Same seed, same ticks."""
        a = run_race(track, raceline, 2, 1, seed=3, sim=SHORT)
        b = run_race(track, raceline, 2, 1, seed=3, sim=SHORT)
        assert a.ticks == b.ticks
        assert a.events == b.events


TURNS = ((1006.0, 1006.0 + 320.0 * np.pi), (2012.0 + 320.0 * np.pi, 2012.0 + 640.0 * np.pi))
SEEDS = (1, 2, 3)


def in_turn(station: np.ndarray) -> np.ndarray:
    return np.logical_or.reduce([(station > lo) & (station < hi) for lo, hi in TURNS])


@pytest.fixture(scope="module")
def solo(track, raceline):
    return run_race(track, raceline, 1, 2)


@pytest.fixture(scope="module")
def races(track, raceline):
    """Six cars, ten laps, three seeds; with and without slipstream."""
    return {
        (seed, slip): run_race(track, raceline, 6, 10, seed=seed, sim=SimParams(slipstream=slip))
        for seed in SEEDS
        for slip in (True, False)
    }


@pytest.mark.slow
class TestAcceptance:
    """Multi-lap regime checks on the default oval."""

    def test_solo_lap_time(self, solo):
        """Flying laps take 50 +/- 5 s."""
        times = solo.lap_times()[0]
        assert len(times) == 2
        assert all(45.0 <= t <= 55.0 for t in times)

    def test_solo_speeds(self, solo, vehicle):
        """Straight-line top speed near 83 m/s and a corner dip of 2 to 8 m/s."""
        rows = np.array([(r[5], r[6], r[7]) for r in solo.ticks])
        v, omega, station = rows[:, 0], rows[:, 1], rows[:, 2]
        turning = in_turn(station)
        top = v[~turning].max()
        assert top == pytest.approx(83.0, abs=2.0)
        assert 2.0 <= top - v[turning].min() <= 8.0
        # 320 m turns at about 79 m/s give a little under 2 g.
        peak = np.max(np.abs(v * omega))
        assert peak > 1.8 * 9.81
        assert peak <= float(vehicle.a_lat_max(v.max())) + 1e-6
        assert solo.events_of("collision") == solo.events_of("boundary") == []

    def test_no_collisions_or_boundary_violations(self, races):
        """No contact or boundary events in any race."""
        for key, log in races.items():
            report = safety_report(log)
            assert report["collision"] == 0, key
            assert report["boundary"] == 0, key
            assert max(e.data["lap"] for e in log.events_of("lap")) >= 10, key

    def test_field_stays_together(self, races):
        """Mean lap times within 5 percent; the field spans under 200 m late in the race."""
        for seed in SEEDS:
            log = races[(seed, True)]
            summary = summarize(log)
            means = [v["mean"] for v in summary["lap_times"].values()]
            assert len(means) == 6
            assert (max(means) - min(means)) / min(means) < 0.05
            assert summary["mean_gap_final_5_laps_m"] < 200.0

    def test_slipstream_produces_overtakes(self, races):
        """Paired runs: drafting makes passes, and more of them than without it."""
        with_slip = sum(len(overtakes(races[(s, True)])) for s in SEEDS)
        without = sum(len(overtakes(races[(s, False)])) for s in SEEDS)
        assert with_slip >= 1
        assert with_slip > without

    def test_repeat_run_is_identical(self, races, track, raceline, tmp_path):
        """Same seed, same bytes."""
        again = run_race(track, raceline, 6, 10, seed=SEEDS[0])
        first = write_race_log(races[(SEEDS[0], True)], tmp_path / "a")
        second = write_race_log(again, tmp_path / "b")
        for name in ("ticks", "events"):
            assert first[name].read_bytes() == second[name].read_bytes()
