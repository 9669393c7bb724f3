"""Opponent trajectory prediction over the planning horizon.

An opponent is assumed to hold its current path curvature. If that path
would bring it within ``d_min`` of a track boundary, it is instead predicted
to shift onto a line parallel to that boundary, reaching it later than the
constant-curvature path would (it never tightens its turn), and to
accelerate along it at full throttle.
"""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .pointmass import (
    DEFAULT_MASS,
    AccelModel,
    EndPoint,
    InfeasibleSegmentError,
    Maneuver,
    ManeuverKind,
    connect_points,
    extend_to,
    replan_velocity,
    time_grid,
)
from .track import OffTrackError, RaPoint, RoadFrame

logger = logging.getLogger(__name__)

OVERSHOOT_TOL = 1e-3
# Multiples of the first shift distance tried until the path stops short of its line.
_P1_STRETCH = (1.0, 1.5, 2.0, 3.0, math.inf)


class PredictionError(ValueError):
    """Raised when an opponent state cannot be predicted."""


class PredictionParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    t_max: float = Field(default=3.0, gt=0)
    d_min: float = Field(default=1.0, ge=0)
    k: float = Field(default=1.5, ge=1.0)
    dt: float = Field(default=0.04, gt=0)


@dataclass(frozen=True)
class OpponentState:
    """Road-aligned state relative to the ego station plus world yaw rate (CCW positive)."""

    x: float
    y: float
    x_dot: float
    y_dot: float
    omega: float = 0.0
    vehicle_id: int = -1

    @property
    def speed(self) -> float:
        return math.hypot(self.x_dot, self.y_dot)


def estimate_curvature(s: OpponentState) -> float:
    """Signed path curvature omega / |v|; positive turns left."""
    if s.speed <= 0:
        raise PredictionError("Cannot estimate curvature of a stationary vehicle")
    return s.omega / s.speed


def _arc(t: np.ndarray, v: float, heading0: float, kappa: float) -> tuple[np.ndarray, ...]:
    """Displacement and heading along a constant-curvature arc from the origin."""
    heading = heading0 + kappa * v * t
    if abs(kappa) < 1e-12:
        return v * t * math.cos(heading0), v * t * math.sin(heading0), heading
    dx = (np.sin(heading) - math.sin(heading0)) / kappa
    dy = -(np.cos(heading) - math.cos(heading0)) / kappa
    return dx, dy, heading


def extrapolate_constant_curvature(
    s: OpponentState, params: PredictionParams, frame: RoadFrame | None = None
) -> Maneuver:
    """Constant-speed, constant-curvature extrapolation sampled on [0, t_max].

    With a ``frame`` the arc is laid out in world coordinates and projected
    back onto the track; without one the road-aligned plane is treated as flat
    (valid on a straight), with y pointing to the right of travel.
    """
    kappa = estimate_curvature(s)
    v = s.speed
    t = time_grid(params.t_max, params.dt)

    if frame is None:
        # Road y points right, so a left turn lowers the road heading.
        dx, dy, heading = _arc(t, v, math.atan2(-s.y_dot, s.x_dot), kappa)
        x, y = s.x + dx, s.y - dy
        x_dot, y_dot = v * np.cos(heading), -v * np.sin(heading)
    else:
        try:
            start = frame.to_cartesian(RaPoint(s.x, s.y, s.x_dot, s.y_dot))
        except OffTrackError as exc:
            raise PredictionError(f"Opponent is off track: {exc}") from exc
        dx, dy, heading = _arc(t, v, math.atan2(start.vy, start.vx), kappa)
        wx, wy = start.x + dx, start.y + dy
        x, y, local = frame.road_aligned_many(wx, wy)
        vx, vy = v * np.cos(heading), v * np.sin(heading)
        x_dot = vx * np.cos(local) + vy * np.sin(local)
        y_dot = vx * np.sin(local) - vy * np.cos(local)
        # Exact initial state.
        x[0], y[0], x_dot[0], y_dot[0] = s.x, s.y, s.x_dot, s.y_dot

    speed = np.full_like(t, v)
    return Maneuver(
        kind=ManeuverKind.PREDICTED,
        segments=(),
        t=t,
        x=np.asarray(x, dtype=float),
        y=np.asarray(y, dtype=float),
        x_dot=np.asarray(x_dot, dtype=float),
        y_dot=np.asarray(y_dot, dtype=float),
        speed=speed,
        speed_limit=speed.copy(),
        dt=params.dt,
    )


def _first_boundary_approach(
    extrapolated: Maneuver, width: float, d_min: float
) -> tuple[float, float] | None:
    """(x_hat, y_hat) where the path first comes within ``d_min`` of a boundary."""
    clearance = np.minimum(extrapolated.y, width - extrapolated.y)
    close = clearance <= d_min
    if not np.any(close):
        return None
    i = int(np.argmax(close))
    y_hat = d_min if extrapolated.y[i] <= 0.5 * width else width - d_min
    if i == 0:
        return float(extrapolated.x[0]), y_hat
    c0, c1 = clearance[i - 1], clearance[i]
    frac = (c0 - d_min) / (c0 - c1) if c0 != c1 else 1.0
    x_hat = extrapolated.x[i - 1] + frac * (extrapolated.x[i] - extrapolated.x[i - 1])
    return float(x_hat), y_hat


def predict(
    s: OpponentState,
    params: PredictionParams,
    frame: RoadFrame | None = None,
    width: float | None = None,
    accel_model: AccelModel | None = None,
    mass: float = DEFAULT_MASS,
) -> Maneuver:
    """Predict an opponent's trajectory J(t) over ``params.t_max``.

    Returns the constant-curvature extrapolation itself when it stays clear
    of both boundaries; otherwise a boundary-parallel lateral shift,
    re-planned at full throttle when ``accel_model`` is given and extended at
    constant velocity to the horizon.

    Raises:
        PredictionError: Stationary, reversing or off-track opponent.
    """
    if width is None:
        if frame is None:
            raise PredictionError("Either a road frame or a track width is required")
        width = frame.width
    if s.y < 0 or s.y > width:
        raise PredictionError(f"Opponent offset {s.y:.3f} m outside track width {width} m")
    if s.x_dot <= 0:
        raise PredictionError(f"Opponent is not moving along the track (x_dot={s.x_dot})")

    extrapolated = extrapolate_constant_curvature(s, params, frame)
    approach = _first_boundary_approach(extrapolated, width, params.d_min)
    if approach is None:
        return extrapolated
    x_hat, y_hat = approach

    p0 = EndPoint(s.x, s.y, s.x_dot, s.y_dot)
    p2 = EndPoint(s.x + s.x_dot * params.t_max, y_hat, s.x_dot, 0.0)
    if x_hat <= s.x:
        # Already inside the band: settle onto the current offset immediately.
        y_hat = s.y
        p2 = EndPoint(p2.x, y_hat, s.x_dot, 0.0)
        first = s.x_dot * params.dt
    else:
        first = params.k * (x_hat - s.x)

    edge = max(y_hat, s.y) if y_hat > 0.5 * width else min(y_hat, s.y)
    predicted: Maneuver | None = None
    worst = math.inf
    last_error: InfeasibleSegmentError | None = None
    for stretch in _P1_STRETCH:
        x1 = s.x + stretch * first
        if x1 >= p2.x - s.x_dot * params.dt:
            points = [p0, p2]
        else:
            points = [p0, EndPoint(x1, y_hat, s.x_dot, 0.0), p2]
        try:
            candidate = connect_points(
                points, mass, params.dt, kind=ManeuverKind.PREDICTED, target_y=y_hat
            )
        except InfeasibleSegmentError as exc:
            last_error = exc
            continue
        beyond = _overshoot(candidate.y, edge, y_hat > 0.5 * width)
        if beyond < worst:
            predicted, worst = candidate, beyond
        if beyond <= OVERSHOOT_TOL or len(points) == 2:
            break
    if predicted is None:
        raise PredictionError(f"Cannot build boundary-parallel prediction: {last_error}")
    if worst > OVERSHOOT_TOL:
        logger.debug("Prediction overshoots its boundary line by %.4f m; clamping", worst)
        predicted = _clamp_to_line(predicted, edge, y_hat > 0.5 * width)
    if accel_model is not None:
        predicted = replan_velocity(predicted, s.speed, accel_model)
    return extend_to(predicted, params.t_max)


def _overshoot(y: np.ndarray, edge: float, outward: bool) -> float:
    """How far ``y`` passes ``edge`` toward the boundary it approaches."""
    return float(np.max(y) - edge) if outward else float(edge - np.min(y))


def _clamp_to_line(man: Maneuver, edge: float, outward: bool) -> Maneuver:
    if outward:
        y = np.minimum(man.y, edge)
    else:
        y = np.maximum(man.y, edge)
    y_dot = np.where(y != man.y, 0.0, man.y_dot)
    return replace(man, y=y, y_dot=y_dot)
