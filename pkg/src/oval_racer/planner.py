"""Candidate maneuver generation, scoring and selection.

Every cycle the planner builds a fixed candidate set (one race-line merge
plus N lateral shifts across the track), checks each against the predicted
opponent trajectories, slows down the blocked ones where that clears the
conflict, and picks the cheapest free candidate:

    cost = travel time - race-line nearness reward - continuity reward

When nothing is free it falls back to the candidate whose first collision
lies furthest in the future.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import brentq

from .collision import (
    CollisionReport,
    SafetyBound,
    SafetyParams,
    is_fully_blocked_behind,
    reduce_speed_to_avoid,
    trajectories_collide,
)
from .pointmass import (
    EndPoint,
    Maneuver,
    ManeuverKind,
    connect_points,
    replan_velocity,
)
from .prediction import OpponentState, PredictionError, PredictionParams, predict
from .raceline import RaceLineReference
from .track import RoadFrame, TrackModel
from .vehicle import VehicleParams

logger = logging.getLogger(__name__)

MERGE = "raceline_merge"


class ManeuverHorizonError(ValueError):
    """Raised when a maneuver's shift point falls beyond the planning horizon."""


class PlannerParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_targets: int = Field(default=7, ge=2)
    d_min: float = Field(default=1.0, ge=0)
    b: float = Field(default=25.0, ge=0)
    c: float = Field(default=50.0, gt=0)
    b_merge: float = Field(default=25.0, ge=0)
    c_merge: float = Field(default=50.0, gt=0)
    x_max: float = Field(default=200.0, gt=0)
    r_opt: float = Field(default=0.15, ge=0)
    r_k: float = Field(default=0.10, ge=0)
    r_d: float = Field(default=0.05, gt=0)
    dt: float = Field(default=0.04, gt=0)
    sensor_range: float = Field(default=200.0, gt=0)
    merge_knot_spacing: float = Field(default=25.0, gt=0)


def lateral_shift_targets(width: float, n: int, d_min: float) -> list[float]:
    """Evenly spaced target offsets from ``d_min`` to ``width - d_min``."""
    if n < 2:
        raise ValueError(f"Need at least 2 targets, got {n}")
    if width <= 2.0 * d_min:
        raise ValueError(f"Track width {width} m leaves no room inside d_min {d_min} m")
    step = (width - 2.0 * d_min) / (n - 1)
    return [d_min + i * step for i in range(n)]


def candidate_identity(man: Maneuver) -> str:
    if man.kind == ManeuverKind.RACELINE_MERGE:
        return MERGE
    return f"shift:{man.target_y:.3f}"


@dataclass(frozen=True)
class PlannerState:
    last_selected: str | None = None
    time_since_switch: float = 0.0

    def advanced(self, dt: float) -> "PlannerState":
        return replace(self, time_since_switch=self.time_since_switch + dt)


@dataclass(frozen=True)
class ScoredCandidate:
    maneuver: Maneuver
    identity: str
    free: bool
    travel_time: float
    nearness_reward: float = 0.0
    continuity_reward: float = 0.0
    deviation: float = 0.0
    reduced: bool = False
    collision: CollisionReport | None = None

    @property
    def cost(self) -> float:
        return self.travel_time - self.nearness_reward - self.continuity_reward

    def to_record(self) -> dict[str, Any]:
        return {
            "identity": self.identity,
            "kind": self.maneuver.kind.value,
            "target_y": self.maneuver.target_y,
            "free": self.free,
            "reduced": self.reduced,
            "peak_lateral_accel": round(self.maneuver.peak_lateral_accel, 6),
            "travel_time": round(self.travel_time, 6),
            "nearness_reward": self.nearness_reward,
            "continuity_reward": round(self.continuity_reward, 6),
            "cost": round(self.cost, 6),
            "first_collision_time": self.collision.first_time if self.collision else None,
        }


@dataclass(frozen=True)
class PlanResult:
    selected: ScoredCandidate
    candidates: list[ScoredCandidate] = field(repr=False)
    state: PlannerState
    predictions: dict[int, Maneuver] = field(default_factory=dict, repr=False)

    def to_record(self) -> dict[str, Any]:
        return {
            "selected": self.selected.identity,
            "fallback": not self.selected.free,
            "candidates": [c.to_record() for c in self.candidates],
        }


def _speed_cap(
    man: Maneuver, vehicle: VehicleParams, frame: RoadFrame | None
) -> np.ndarray | None:
    if frame is None:
        return None
    y = np.clip(man.y, 0.0, frame.width)
    return np.asarray(vehicle.speed_limit(frame.curvature(man.x, y)), dtype=float)


def _replan(
    man: Maneuver,
    ego: EndPoint,
    vehicle: VehicleParams,
    cap: np.ndarray | None,
) -> Maneuver:
    v0 = max(math.hypot(ego.x_dot, ego.y_dot), 0.1)
    decel = vehicle.brake_force / vehicle.mass
    return replan_velocity(man, v0, vehicle, speed_cap=cap, decel=decel)


def build_lateral_shift(
    ego: EndPoint,
    y_hat: float,
    params: PlannerParams,
    vehicle: VehicleParams,
    frame: RoadFrame | None = None,
) -> Maneuver:
    """Shift to offset ``y_hat`` at a look-ahead that grows with the shift size.

    Raises:
        ManeuverHorizonError: If the shift point lies at or beyond ``x_max``.
    """
    if frame is not None and not 0.0 < y_hat < frame.width:
        raise ValueError(f"Target offset {y_hat} outside (0, {frame.width})")
    q1_x = ego.x + abs(y_hat - ego.y) * params.b + params.c
    if q1_x >= ego.x + params.x_max:
        raise ManeuverHorizonError(
            f"Shift point {q1_x:.1f} m beyond horizon {params.x_max:.1f} m"
        )
    points = [
        ego,
        EndPoint(q1_x, y_hat, ego.x_dot, 0.0),
        EndPoint(ego.x + params.x_max, y_hat, ego.x_dot, 0.0),
    ]
    man = connect_points(
        points, vehicle.mass, params.dt, ManeuverKind.LATERAL_SHIFT, target_y=y_hat
    )
    return _replan(man, ego, vehicle, _speed_cap(man, vehicle, frame))


def build_direct_shift(
    ego: EndPoint,
    y_hat: float,
    params: PlannerParams,
    vehicle: VehicleParams,
    frame: RoadFrame | None = None,
) -> Maneuver:
    """Single-segment shift reaching ``y_hat`` at the horizon."""
    points = [ego, EndPoint(ego.x + params.x_max, y_hat, ego.x_dot, 0.0)]
    man = connect_points(
        points, vehicle.mass, params.dt, ManeuverKind.LATERAL_SHIFT, target_y=y_hat
    )
    return _replan(man, ego, vehicle, _speed_cap(man, vehicle, frame))


def merge_point(
    ego: EndPoint, reference: RaceLineReference, ego_station: float, params: PlannerParams
) -> float:
    """Distance x at which |y_rl(x) - y_e| * b + c = x, by bracketed root finding.

    Falls back to half the horizon, with a warning, when no root exists.
    """

    def residual(x: float) -> float:
        y_rl = float(reference.offset_at(ego_station + x))
        return abs(y_rl - ego.y) * params.b_merge + params.c_merge - (x - ego.x)

    lo, hi = ego.x, ego.x + params.x_max
    if residual(hi) > 0:
        logger.debug(
            "No race-line merge point within %.0f m (offset %.2f m); using half horizon",
            params.x_max, ego.y,
        )
        return ego.x + 0.5 * params.x_max
    return float(brentq(residual, lo, hi, xtol=1e-6))


def build_raceline_merge(
    ego: EndPoint,
    reference: RaceLineReference,
    params: PlannerParams,
    vehicle: VehicleParams,
    frame: RoadFrame,
    speed_scale: float = 1.0,
) -> Maneuver:
    """Merge onto the race line and follow it to the horizon.

    Knots on the race line every ``merge_knot_spacing`` metres after the
    merge point keep the merged portion on the line. Speed is capped by the
    race line's own profile times ``speed_scale``.
    """
    station = frame.ego_station
    x_end = ego.x + params.x_max
    x1 = min(merge_point(ego, reference, station, params), x_end - 1.0)
    xs = [x1]
    while xs[-1] + params.merge_knot_spacing < x_end - 1e-6:
        xs.append(xs[-1] + params.merge_knot_spacing)
    xs.append(x_end)

    knots = np.asarray(xs)
    offsets = reference.offset_at(station + knots)
    slopes = reference.slope_at(station + knots)
    points = [ego] + [
        EndPoint(float(x), float(y), ego.x_dot, float(k) * ego.x_dot)
        for x, y, k in zip(knots, offsets, slopes, strict=True)
    ]
    man = connect_points(points, vehicle.mass, params.dt, ManeuverKind.RACELINE_MERGE)
    cap = np.minimum(
        _speed_cap(man, vehicle, frame), speed_scale * reference.speed_at(station + man.x)
    )
    return _replan(man, ego, vehicle, cap)


class ManeuverPlanner:
    """Plans for one vehicle. Holds configuration only; cycle state lives in PlannerState."""

    def __init__(
        self,
        track: TrackModel,
        reference: RaceLineReference,
        vehicle: VehicleParams | None = None,
        params: PlannerParams | None = None,
        prediction: PredictionParams | None = None,
        safety: SafetyParams | None = None,
    ):
        self.track = track
        self.reference = reference
        self.vehicle = vehicle or VehicleParams()
        self.params = params or PlannerParams()
        pred = prediction or PredictionParams()
        self.prediction = pred.model_copy(update={"dt": self.params.dt})
        self.safety = safety or SafetyParams()
        self.bound = SafetyBound.for_vehicle(self.vehicle.length, self.vehicle.width, self.safety)
        self.targets = lateral_shift_targets(
            track.width, self.params.n_targets, self.params.d_min
        )

    def candidates(
        self, ego: EndPoint, frame: RoadFrame, drag_factor: float = 1.0
    ) -> list[Maneuver]:
        """Race-line merge first, then the lateral shifts in target order.

        A ``drag_factor`` below one plans with the drafted car's higher top speed.
        """
        vehicle = self.vehicle.drafted(drag_factor)
        scale = vehicle.v_max / self.vehicle.v_max
        out = [build_raceline_merge(ego, self.reference, self.params, vehicle, frame, scale)]
        for y_hat in self.targets:
            try:
                out.append(build_lateral_shift(ego, y_hat, self.params, vehicle, frame))
            except ManeuverHorizonError:
                out.append(build_direct_shift(ego, y_hat, self.params, vehicle, frame))
        return out

    def predictions(
        self, ego: EndPoint, opponents: list[OpponentState], frame: RoadFrame
    ) -> dict[int, Maneuver]:
        out: dict[int, Maneuver] = {}
        for opp in opponents:
            if abs(opp.x) > self.params.sensor_range:
                continue
            if is_fully_blocked_behind(ego.y, opp.x, opp.y, self.bound):
                continue
            try:
                out[opp.vehicle_id] = predict(
                    opp, self.prediction, frame, accel_model=self.vehicle, mass=self.vehicle.mass
                )
            except PredictionError as exc:
                logger.debug("Skipping opponent %d: %s", opp.vehicle_id, exc)
        return out

    def _first_collision(
        self, man: Maneuver, preds: dict[int, Maneuver]
    ) -> CollisionReport | None:
        earliest: CollisionReport | None = None
        for vid, pred in preds.items():
            report = trajectories_collide(
                man, pred, self.bound, opponent_id=vid,
                check_midpoints=self.safety.check_midpoints,
            )
            if report.collides and (earliest is None or report.first_time < earliest.first_time):
                earliest = report
        return earliest

    def _min_clearance(self, man: Maneuver, preds: dict[int, Maneuver]) -> float:
        return min(
            (
                trajectories_collide(
                    man, p, self.bound, check_midpoints=self.safety.check_midpoints
                ).min_clearance
                for p in preds.values()
            ),
            default=math.inf,
        )

    def classify(self, man: Maneuver, preds: dict[int, Maneuver]) -> ScoredCandidate:
        """Free as planned, free after slowing down, or colliding at its latest."""
        identity = candidate_identity(man)
        report = self._first_collision(man, preds)
        if report is None:
            return ScoredCandidate(man, identity, True, man.duration)

        decel = self.vehicle.brake_force / self.vehicle.mass
        current, current_report = man, report
        for _ in range(len(preds)):
            current = reduce_speed_to_avoid(
                current, preds[current_report.opponent_id], self.bound, decel,
                min_speed=self.safety.min_speed, check_midpoints=self.safety.check_midpoints,
            )
            if current.infeasible:
                break
            current_report = self._first_collision(current, preds)
            if current_report is None:
                return ScoredCandidate(current, identity, True, current.duration, reduced=True)

        # Keep whichever version collides later.
        later = self._first_collision(current, preds) or report
        if later.first_time > report.first_time:
            return ScoredCandidate(
                current, identity, False, current.duration, reduced=True, collision=later
            )
        return ScoredCandidate(man, identity, False, man.duration, collision=report)

    def deviation(self, man: Maneuver, ego_station: float) -> float:
        """Mean lateral distance from the race line over the maneuver."""
        return float(np.mean(np.abs(man.y - self.reference.offset_at(ego_station + man.x))))

    def plan(
        self,
        ego_station: float,
        ego: EndPoint,
        opponents: list[OpponentState],
        state: PlannerState | None = None,
        drag_factor: float = 1.0,
    ) -> PlanResult:
        """Run one planning cycle; ``ego`` is road-aligned at ``ego_station`` (x = 0).

        ``drag_factor`` is the ego's current slipstream drag multiplier.
        """
        state = state or PlannerState()
        frame = RoadFrame(self.track, ego_station)
        if ego.x_dot < 1.0:
            ego = replace(ego, x_dot=1.0)
        preds = self.predictions(ego, opponents, frame)
        scored = [self.classify(m, preds) for m in self.candidates(ego, frame, drag_factor)]

        scored = [replace(c, deviation=self.deviation(c.maneuver, ego_station)) for c in scored]
        free = [i for i, c in enumerate(scored) if c.free]
        if free:
            nearest = min(free, key=lambda i: scored[i].deviation)
            scored[nearest] = replace(scored[nearest], nearness_reward=self.params.r_opt)
        if state.last_selected is not None:
            bonus = max(0.0, self.params.r_k - self.params.r_d * state.time_since_switch)
            scored = [
                replace(c, continuity_reward=bonus) if c.identity == state.last_selected else c
                for c in scored
            ]

        if free:
            best = min(
                free,
                key=lambda i: (
                    scored[i].cost,
                    scored[i].identity != state.last_selected,
                    scored[i].deviation,
                ),
            )
        else:
            best = max(
                range(len(scored)),
                key=lambda i: (
                    scored[i].collision.first_time,
                    self._min_clearance(scored[i].maneuver, preds),
                ),
            )
        selected = scored[best]
        if selected.identity == state.last_selected:
            new_state = state
        else:
            new_state = PlannerState(selected.identity, 0.0)
        return PlanResult(selected, scored, new_state, preds)
