"""Tests for opponent trajectory prediction."""

import numpy as np
import pytest

from oval_racer.pointmass import ManeuverKind
from oval_racer.prediction import (
    OpponentState,
    PredictionError,
    PredictionParams,
    estimate_curvature,
    extrapolate_constant_curvature,
    predict,
)
from oval_racer.track import RoadFrame

WIDTH = 14.0


@pytest.fixture
def params():
    return PredictionParams()


class TestExtrapolation:
    """Tests for constant-curvature extrapolation."""

    def test_curvature_estimate(self):
        """Curvature is yaw rate over speed."""
        s = OpponentState(x=0.0, y=7.0, x_dot=80.0, y_dot=0.0, omega=0.25)
        assert estimate_curvature(s) == pytest.approx(0.25 / 80.0)

    def test_stationary_has_no_curvature(self):
        """A stopped car has no curvature estimate."""
        with pytest.raises(PredictionError):
            estimate_curvature(OpponentState(x=0.0, y=7.0, x_dot=0.0, y_dot=0.0))

    def test_straight_line(self, params):
        """Zero curvature extrapolates straight ahead."""
        out = extrapolate_constant_curvature(OpponentState(10.0, 7.0, 80.0, 0.0), params)
        assert out.kind == ManeuverKind.PREDICTED
        assert out.duration == pytest.approx(3.0)
        assert out.x[-1] == pytest.approx(250.0)
        np.testing.assert_allclose(out.y, 7.0)

    def test_lateral_drift(self, params):
        """Positive y_dot moves the opponent to the right."""
        out = extrapolate_constant_curvature(OpponentState(0.0, 7.0, 80.0, 1.0), params)
        assert out.y[-1] == pytest.approx(10.0, rel=1e-6)

    def test_follows_turn_in_frame(self, track, params):
        """An opponent holding the curvature of its lane keeps its offset in a turn."""
        frame = RoadFrame(track, ego_station=1100.0)
        radius = 320.0 + 7.0
        s = OpponentState(0.0, 7.0, 70.0, 0.0, omega=70.0 / radius)
        out = extrapolate_constant_curvature(s, params, frame)
        assert np.max(np.abs(out.y - 7.0)) < 0.01
        assert out.x[-1] == pytest.approx(210.0 * 320.0 / radius, rel=1e-3)


class TestPredict:
    """Tests for boundary-aware prediction."""

    def test_clear_path_is_extrapolation(self, params):
        """A car clear of the edges keeps its line."""
        s = OpponentState(0.0, 7.0, 80.0, 0.0)
        out = predict(s, params, width=WIDTH)
        assert out.target_y is None
        np.testing.assert_allclose(out.y, 7.0)

    def test_shift_parallel_to_boundary(self, params):
        """A car drifting toward the wall settles d_min from it, later than the drift would."""
        s = OpponentState(0.0, 7.0, 80.0, 4.0)
        out = predict(s, params, width=WIDTH)
        assert out.target_y == pytest.approx(13.0)
        assert out.y[-1] == pytest.approx(13.0, abs=1e-6)
        assert out.y.max() <= 13.0 + 1e-6
        assert out.y_dot[-1] == pytest.approx(0.0, abs=1e-6)
        assert out.duration == pytest.approx(3.0)
        # The straight drift would reach the band at t = 1.5 s.
        assert float(np.interp(1.5, out.t, out.y)) < 13.0 - 1e-3

    def test_shift_toward_left_boundary(self, params):
        """A car drifting left settles on the left line."""
        s = OpponentState(0.0, 7.0, 80.0, -4.0)
        out = predict(s, params, width=WIDTH)
        assert out.target_y == pytest.approx(1.0)
        assert out.y.min() >= 1.0 - 1e-6

    def test_already_inside_band(self, params):
        """A car already within d_min keeps its current offset."""
        s = OpponentState(0.0, 13.5, 80.0, 0.0)
        out = predict(s, params, width=WIDTH)
        assert out.target_y == pytest.approx(13.5)
        np.testing.assert_allclose(out.y, 13.5, atol=1e-9)

    def test_full_throttle_replanning(self, params, vehicle):
        """Prediction accelerates when given a vehicle."""
        s = OpponentState(0.0, 7.0, 60.0, 4.0)
        out = predict(s, params, width=WIDTH, accel_model=vehicle)
        assert out.speed[-1] > out.speed[0]
        assert out.duration == pytest.approx(3.0)

    def test_needs_width(self, params):
        """Width or a road frame is required."""
        with pytest.raises(PredictionError, match="width"):
            predict(OpponentState(0.0, 7.0, 80.0, 0.0), params)

    def test_off_track(self, params):
        """A car outside the track cannot be predicted."""
        with pytest.raises(PredictionError, match="outside"):
            predict(OpponentState(0.0, 15.0, 80.0, 0.0), params, width=WIDTH)

    def test_reversing(self, params):
        """A car going backwards cannot be predicted."""
        with pytest.raises(PredictionError, match="not moving"):
            predict(OpponentState(0.0, 7.0, -5.0, 0.0), params, width=WIDTH)

    def test_frame_supplies_width(self, track, params):
        """The road frame supplies the width."""
        frame = RoadFrame(track, ego_station=100.0)
        out = predict(OpponentState(20.0, 7.0, 80.0, 0.0), params, frame=frame)
        assert out.x[-1] == pytest.approx(260.0, abs=1e-6)

    def test_never_crosses_its_boundary_line(self, track, params, vehicle):
        """Random opponents in the open lane never come closer than d_min to either wall."""
        rng = np.random.default_rng(11)
        checked = 0
        for _ in range(900):
            frame = RoadFrame(track, ego_station=float(rng.uniform(0.0, track.total_length)))
            s = OpponentState(
                x=float(rng.uniform(-50.0, 100.0)),
                y=float(rng.uniform(1.0, 13.0)),
                x_dot=float(rng.uniform(30.0, 85.0)),
                y_dot=float(rng.uniform(-6.0, 6.0)),
                omega=float(rng.uniform(-0.1, 0.3)),
            )
            try:
                out = predict(s, params, frame=frame, accel_model=vehicle)
            except ValueError:
                continue
            checked += 1
            assert out.y.min() >= 1.0 - 1e-3, s
            assert out.y.max() <= 13.0 + 1e-3, s
        assert checked > 450

    def test_fast_drift_stops_at_line(self, params):
        """A hard sideways drift still settles on the boundary line without passing it."""
        s = OpponentState(0.0, 11.5, 40.0, 6.0)
        out = predict(s, params, width=WIDTH)
        assert out.target_y == pytest.approx(13.0)
        assert out.y.max() <= 13.0 + 1e-3
        assert out.y[-1] == pytest.approx(13.0, abs=1e-3)

    def test_k_below_one_rejected(self):
        """k must be at least one."""
        with pytest.raises(ValueError):
            PredictionParams(k=0.5)
