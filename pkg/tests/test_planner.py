"""Tests for candidate generation, scoring and selection."""

import pytest

from oval_racer.planner import (
    MERGE,
    ManeuverHorizonError,
    ManeuverPlanner,
    PlannerParams,
    PlannerState,
    ScoredCandidate,
    build_direct_shift,
    build_lateral_shift,
    build_raceline_merge,
    candidate_identity,
    lateral_shift_targets,
    merge_point,
)
from oval_racer.pointmass import EndPoint, ManeuverKind
from oval_racer.prediction import OpponentState
from oval_racer.track import RoadFrame

# Back straight: race line sits at offset 12 and the next turn is 600 m away.
STATION = 2400.0


@pytest.fixture
def params():
    return PlannerParams()


@pytest.fixture
def planner(track, reference, vehicle):
    return ManeuverPlanner(track, reference, vehicle)


@pytest.fixture
def on_line():
    return EndPoint(0.0, 12.0, 80.0)


class TestTargets:
    """Tests for lateral target offsets and identities."""

    def test_even_spacing(self):
        """Targets are evenly spaced across the usable width."""
        assert lateral_shift_targets(14.0, 7, 1.0) == pytest.approx([1, 3, 5, 7, 9, 11, 13])

    def test_too_few_targets(self):
        """At least two targets are needed."""
        with pytest.raises(ValueError):
            lateral_shift_targets(14.0, 1, 1.0)

    def test_track_too_narrow(self):
        """A track narrower than the bound is rejected."""
        with pytest.raises(ValueError):
            lateral_shift_targets(2.0, 7, 1.0)

    def test_identity(self, vehicle, params):
        """Shift identity encodes the target offset."""
        man = build_lateral_shift(EndPoint(0.0, 7.0, 80.0), 9.0, params, vehicle)
        assert candidate_identity(man) == "shift:9.000"

    def test_state_advances(self):
        """Advancing adds time since the last switch."""
        state = PlannerState("shift:9.000", 0.2).advanced(0.04)
        assert state.time_since_switch == pytest.approx(0.24)
        assert state.last_selected == "shift:9.000"


class TestBuilders:
    """Tests for lateral shift and race-line merge maneuvers."""

    def test_lateral_shift(self, vehicle, params):
        """Lateral shift ends on its target offset."""
        man = build_lateral_shift(EndPoint(0.0, 7.0, 80.0), 11.0, params, vehicle)
        assert man.kind == ManeuverKind.LATERAL_SHIFT
        assert man.target_y == 11.0
        assert man.y[-1] == pytest.approx(11.0, abs=1e-6)
        assert man.x[-1] == pytest.approx(params.x_max)
        assert man.speed[-1] > 80.0
        assert man.speed.max() <= vehicle.v_max + 1e-9

    def test_shift_beyond_horizon(self, vehicle, params):
        """A 6 m shift needs its shift point at 6 * 25 + 50 = 200 m, the horizon itself."""
        with pytest.raises(ManeuverHorizonError):
            build_lateral_shift(EndPoint(0.0, 7.0, 80.0), 13.0, params, vehicle)

    def test_direct_shift(self, vehicle, params):
        """Direct shift is a single segment."""
        man = build_direct_shift(EndPoint(0.0, 7.0, 80.0), 13.0, params, vehicle)
        assert len(man.segments) == 1
        assert man.y[-1] == pytest.approx(13.0, abs=1e-6)

    def test_target_outside_track(self, vehicle, params, track):
        """Targets off the track are rejected."""
        with pytest.raises(ValueError):
            build_lateral_shift(
                EndPoint(0.0, 7.0, 80.0), 14.5, params, vehicle, RoadFrame(track, STATION)
            )

    def test_merge_point_on_line(self, reference, params, on_line):
        """On the line the merge point is just c_merge ahead."""
        assert merge_point(on_line, reference, STATION, params) == pytest.approx(50.0, abs=1e-4)

    def test_merge_point_offset(self, reference, params):
        """The merge point is found where the line meets the race line."""
        ego = EndPoint(0.0, 10.0, 80.0)
        assert merge_point(ego, reference, STATION, params) == pytest.approx(100.0, abs=1e-3)

    def test_merge_point_fallback(self, reference, params):
        """Ten meters off the line there is no root inside the horizon."""
        ego = EndPoint(0.0, 2.0, 80.0)
        assert merge_point(ego, reference, STATION, params) == pytest.approx(100.0)

    def test_raceline_merge(self, track, reference, vehicle, params):
        """Merge ends on the race line."""
        frame = RoadFrame(track, STATION)
        man = build_raceline_merge(EndPoint(0.0, 10.0, 80.0), reference, params, vehicle, frame)
        assert man.kind == ManeuverKind.RACELINE_MERGE
        assert candidate_identity(man) == MERGE
        assert man.y[-1] == pytest.approx(12.0, abs=1e-3)
        assert man.x[-1] == pytest.approx(params.x_max)
        assert len(man.segments) == 5


class TestPlanning:
    """Tests for one planning cycle."""

    def test_candidate_set(self, planner, track, on_line):
        """Merge plus one shift per target."""
        candidates = planner.candidates(on_line, RoadFrame(track, STATION))
        assert len(candidates) == 8
        assert candidates[0].kind == ManeuverKind.RACELINE_MERGE
        assert [c.target_y for c in candidates[1:]] == pytest.approx([1, 3, 5, 7, 9, 11, 13])

    def test_free_road_follows_race_line(self, planner, on_line):
        """On a free road the merge wins."""
        result = planner.plan(STATION, on_line, [])
        assert result.selected.identity == MERGE
        assert result.selected.free
        assert result.selected.nearness_reward == pytest.approx(0.15)
        assert result.state == PlannerState(MERGE, 0.0)
        assert all(c.free for c in result.candidates)

    def test_continuity_reward(self, track, reference, vehicle, on_line):
        """Without a nearness reward the previous choice wins near-ties."""
        planner = ManeuverPlanner(track, reference, vehicle, PlannerParams(r_opt=0.0))
        result = planner.plan(STATION, on_line, [], PlannerState("shift:13.000", 0.0))
        assert result.selected.identity == "shift:13.000"
        assert result.selected.continuity_reward == pytest.approx(0.10)
        assert result.state == PlannerState("shift:13.000", 0.0)

    def test_continuity_decays(self, planner, on_line):
        """Continuity reward is gone once the window passes."""
        result = planner.plan(STATION, on_line, [], PlannerState("shift:13.000", 10.0))
        record = next(c for c in result.candidates if c.identity == "shift:13.000")
        assert record.continuity_reward == 0.0

    def test_passes_slow_car(self, planner, on_line):
        """A slow car in the lane ahead is passed on the inside."""
        slow = OpponentState(120.0, 12.0, 20.0, 0.0, vehicle_id=1)
        result = planner.plan(STATION, on_line, [slow])
        assert 1 in result.predictions
        assert result.selected.free
        assert result.selected.identity == "shift:7.000"
        merge = result.candidates[0]
        assert merge.reduced or not merge.free

    def test_fallback_when_all_blocked(self, planner):
        """Three nearly stopped cars across the track block every candidate."""
        ego = EndPoint(0.0, 7.0, 80.0)
        wall = [OpponentState(40.0, y, 1.0, 0.0, vehicle_id=i) for i, y in
                enumerate((2.5, 7.0, 11.5), start=1)]
        result = planner.plan(STATION, ego, wall)
        assert not any(c.free for c in result.candidates)
        assert not result.selected.free
        latest = max(c.collision.first_time for c in result.candidates)
        assert result.selected.collision.first_time == pytest.approx(latest)
        assert result.to_record()["fallback"] is True

    def test_ignores_cars_out_of_range(self, planner, on_line):
        """Cars beyond prediction range are not predicted."""
        far = OpponentState(500.0, 12.0, 20.0, 0.0, vehicle_id=4)
        assert planner.plan(STATION, on_line, [far]).predictions == {}

    def test_ignores_car_fully_behind(self, planner, on_line):
        """A car fully behind is skipped."""
        behind = OpponentState(-20.0, 12.0, 85.0, 0.0, vehicle_id=5)
        assert planner.plan(STATION, on_line, [behind]).predictions == {}

    def test_record(self, planner, on_line):
        """The debug record lists every candidate."""
        record = planner.plan(STATION, on_line, []).to_record()
        assert record["selected"] == MERGE
        assert len(record["candidates"]) == 8
        assert {"identity", "free", "cost", "travel_time"} <= set(record["candidates"][0])
        shift = next(c for c in record["candidates"] if c["identity"] == "shift:7.000")
        assert shift["peak_lateral_accel"] > 0.0


class TestSelection:
    """Tests for selection over several cycles."""

    def test_returns_to_race_line(self, planner):
        """With the road clear again a car off the line merges back."""
        ego = EndPoint(0.0, 7.0, 80.0)
        result = planner.plan(STATION, ego, [], PlannerState("shift:7.000", 5.0))
        assert result.selected.identity == MERGE
        assert result.selected.maneuver.y[-1] == pytest.approx(12.0, abs=1e-3)

    def test_nearness_goes_to_nearest_free(self, planner, on_line):
        """Only the free candidate closest to the race line gets the nearness reward."""
        slow = OpponentState(120.0, 12.0, 20.0, 0.0, vehicle_id=1)
        result = planner.plan(STATION, on_line, [slow])
        rewarded = [c for c in result.candidates if c.nearness_reward > 0]
        assert len(rewarded) == 1
        assert rewarded[0].free
        closest = min(c.deviation for c in result.candidates if c.free)
        assert rewarded[0].deviation == pytest.approx(closest)

    def test_no_switch_while_continuity_holds(self, track, reference, vehicle, on_line):
        """A held choice survives every cycle until its bonus has mostly decayed."""
        params = PlannerParams(r_opt=0.0)
        planner = ManeuverPlanner(track, reference, vehicle, params)
        state = PlannerState("shift:13.000", 0.0)
        hold = params.r_k / params.r_d
        elapsed = 0.0
        while elapsed < 0.9 * hold:
            result = planner.plan(STATION, on_line, [], state.advanced(0.04))
            state = result.state
            elapsed = state.time_since_switch
            assert result.selected.identity == "shift:13.000", elapsed

    def test_selection_ignores_constant_time_offset(self, planner, on_line, monkeypatch):
        """Adding the same time to every candidate leaves the choice unchanged."""
        slow = OpponentState(120.0, 12.0, 20.0, 0.0, vehicle_id=1)
        before = planner.plan(STATION, on_line, [slow]).selected.identity
        monkeypatch.setattr(
            ScoredCandidate,
            "cost",
            property(lambda c: c.travel_time + 7.5 - c.nearness_reward - c.continuity_reward),
        )
        assert planner.plan(STATION, on_line, [slow]).selected.identity == before

    def test_drafting_raises_planned_speed(self, planner, on_line, vehicle):
        """In a slipstream the candidates may run past the undrafted top speed."""
        free = planner.plan(STATION, on_line, [])
        drafting = planner.plan(STATION, on_line, [], drag_factor=0.75)
        assert free.selected.maneuver.speed.max() <= vehicle.v_max + 1e-9
        assert drafting.selected.maneuver.speed.max() > vehicle.v_max
        assert drafting.selected.travel_time < free.selected.travel_time

    def test_drafting_car_pulls_out(self, planner):
        """A drafting car closing on the car ahead leaves the lane instead of lifting."""
        ego = EndPoint(0.0, 12.0, 86.0)
        ahead = OpponentState(25.0, 12.0, 78.0, 0.0, vehicle_id=1)
        result = planner.plan(STATION, ego, [ahead], drag_factor=0.75)
        merge = result.candidates[0]
        assert merge.reduced or not merge.free
        assert result.selected.identity != MERGE
        assert result.selected.free
        assert not result.selected.reduced
