"""Maneuver tracking: pure pursuit steering and following-aware speed control."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .planner import ManeuverPlanner, PlannerState, PlanResult
from .pointmass import EndPoint, Maneuver
from .prediction import OpponentState
from .track import CartesianPoint, RoadFrame

logger = logging.getLogger(__name__)


class ControlGains(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k_t: float = Field(default=0.5, gt=0)
    k_omega: float = Field(default=1.2, gt=0)
    k_v: float = Field(default=1.0, gt=0)
    k_f: float = Field(default=1.0, gt=0)
    l_d: float = Field(default=15.0, gt=0)
    min_lookahead: float = Field(default=5.0, gt=0)
    follow_envelope: float = Field(default=1.5, gt=1.0)
    speed_preview: float = Field(default=0.2, ge=0)
    # Added to the planned ceiling so an unobstructed car runs at full throttle.
    full_throttle_margin: float = Field(default=2.0, ge=0)


@dataclass(frozen=True)
class Commands:
    steering: float = 0.0
    throttle_brake: float = 0.0


@dataclass(frozen=True)
class PursuitResult:
    omega_d: float
    lookahead: float
    alpha: float
    degraded: bool = False


def _clamp(value: float, lo: float = -1.0, hi: float = 1.0) -> float:
    return min(max(value, lo), hi)


def pure_pursuit(
    px: float,
    py: float,
    heading: float,
    v: float,
    path_x: np.ndarray,
    path_y: np.ndarray,
    k_t: float,
    min_lookahead: float = 5.0,
) -> PursuitResult:
    """Desired yaw rate toward the path point one look-ahead distance away.

    The look-ahead is k_t * v (at least ``min_lookahead``); the target is
    interpolated where the path first reaches that distance from the
    vehicle. A path that never gets that far is chased at its last point and
    flagged as degraded.
    """
    lookahead = max(k_t * v, min_lookahead)
    dist = np.hypot(np.asarray(path_x) - px, np.asarray(path_y) - py)
    beyond = np.nonzero(dist >= lookahead)[0]
    degraded = beyond.size == 0
    if degraded:
        tx, ty = float(path_x[-1]), float(path_y[-1])
        logger.debug("Pure pursuit degraded: path ends %.1f m ahead", dist[-1])
    else:
        i = int(beyond[0])
        if i == 0:
            tx, ty = float(path_x[0]), float(path_y[0])
        else:
            frac = (lookahead - dist[i - 1]) / (dist[i] - dist[i - 1])
            tx = float(path_x[i - 1] + frac * (path_x[i] - path_x[i - 1]))
            ty = float(path_y[i - 1] + frac * (path_y[i] - path_y[i - 1]))
    d = math.hypot(tx - px, ty - py)
    if d < 1e-9:
        return PursuitResult(0.0, lookahead, 0.0, True)
    alpha = math.remainder(math.atan2(ty - py, tx - px) - heading, 2.0 * math.pi)
    return PursuitResult(2.0 * v * math.sin(alpha) / d, d, alpha, degraded)


def steering(omega_d: float, omega: float, k_omega: float) -> float:
    return _clamp(k_omega * (omega_d - omega))


@dataclass(frozen=True)
class Leader:
    """A vehicle ahead in the ego's lane: its speed and center distance."""

    v_f: float
    gap: float


def desired_speed(profile_speed: float, leader: Leader | None, gains: ControlGains) -> float:
    """Profile speed, or the following law v_f - k_f (L_d - L) inside the envelope.

    The following law never asks for more than the profile speed.
    """
    if leader is None or not 0.0 < leader.gap < gains.follow_envelope * gains.l_d:
        return profile_speed
    follow = leader.v_f - gains.k_f * (gains.l_d - leader.gap)
    return max(min(profile_speed, follow), 0.0)


def throttle_brake(v_d: float, v: float, k_v: float) -> float:
    return _clamp(k_v * (v_d - v))


@dataclass(frozen=True)
class VehicleObservation:
    """World-frame state of one vehicle as seen by a sensor snapshot."""

    vehicle_id: int
    x: float
    y: float
    heading: float
    v: float
    omega: float

    @property
    def cartesian(self) -> CartesianPoint:
        return CartesianPoint(
            self.x, self.y, self.v * math.cos(self.heading), self.v * math.sin(self.heading)
        )


@dataclass(frozen=True)
class ControlOutput:
    commands: Commands
    plan: PlanResult
    pursuit: PursuitResult
    v_desired: float
    leader: Leader | None = None


class VehicleController:
    """One vehicle's planner plus tracker; its only mutable state is the planner state."""

    def __init__(
        self,
        vehicle_id: int,
        planner: ManeuverPlanner,
        gains: ControlGains | None = None,
        period: float = 0.04,
    ):
        self.vehicle_id = vehicle_id
        self.planner = planner
        self.gains = gains or ControlGains()
        self.period = period
        self.state = PlannerState()

    def _leader(
        self, ego_y: float, opponents: list[OpponentState]
    ) -> Leader | None:
        half = self.planner.bound.half_width
        ahead = [
            o for o in opponents
            if o.x > 0 and abs(o.y - ego_y) < 2.0 * half
        ]
        if not ahead:
            return None
        nearest = min(ahead, key=lambda o: o.x)
        return Leader(v_f=nearest.speed, gap=nearest.x)

    def control(
        self,
        ego: VehicleObservation,
        opponents: list[VehicleObservation],
        drag_factor: float = 1.0,
    ) -> ControlOutput:
        track = self.planner.track
        station, _, _ = track.project(ego.x, ego.y)
        frame = RoadFrame(track, float(station[0]))
        own = frame.to_road_aligned(ego.cartesian)
        ego_point = EndPoint(0.0, own.y, own.x_dot, own.y_dot)

        seen: list[OpponentState] = []
        for opp in opponents:
            q = frame.to_road_aligned(opp.cartesian)
            seen.append(OpponentState(q.x, q.y, q.x_dot, q.y_dot, opp.omega, opp.vehicle_id))

        result = self.planner.plan(
            frame.ego_station, ego_point, seen, self.state.advanced(self.period), drag_factor
        )
        self.state = result.state
        man: Maneuver = result.selected.maneuver

        path_x, path_y, _ = frame.cartesian_many(man.x, man.y)
        pursuit = pure_pursuit(
            ego.x, ego.y, ego.heading, ego.v, path_x, path_y,
            self.gains.k_t, self.gains.min_lookahead,
        )
        leader = self._leader(own.y, seen)
        ceiling = man.limit_at(self.gains.speed_preview) + self.gains.full_throttle_margin
        v_d = desired_speed(ceiling, leader, self.gains)
        commands = Commands(
            steering=steering(pursuit.omega_d, ego.omega, self.gains.k_omega),
            throttle_brake=throttle_brake(v_d, ego.v, self.gains.k_v),
        )
        return ControlOutput(commands, result, pursuit, v_d, leader)
