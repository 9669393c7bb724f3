"""Point-mass maneuvers: closed-form bang-bang lateral segments and speed re-planning.

A segment moves a point mass between two road-aligned end states at constant
longitudinal speed, applying a lateral force of constant magnitude that flips
sign exactly once. Several segments chained together form a :class:`Maneuver`,
whose speed profile can then be re-planned for a vehicle that accelerates
along the path until it reaches its top speed.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Protocol

import numpy as np
from scipy.integrate import solve_ivp

DEFAULT_DT = 0.04
DEFAULT_MASS = 750.0
STRAIGHT_TOL = 1e-9
ENDPOINT_TOL = 1e-6


class InfeasibleSegmentError(ValueError):
    """Raised when no single-switch lateral law joins the two end states."""


class SampleRangeError(ValueError):
    """Raised when a segment is sampled outside [0, T]."""


class ManeuverKind(str, Enum):
    """Origin of a maneuver."""

    LATERAL_SHIFT = "lateral_shift"
    RACELINE_MERGE = "raceline_merge"
    PREDICTED = "predicted"


@dataclass(frozen=True)
class EndPoint:
    """Road-aligned boundary state of a segment."""

    x: float
    y: float
    x_dot: float
    y_dot: float = 0.0


@dataclass(frozen=True)
class SegmentLaw:
    """Bang-bang lateral law: +F_y until ``t_switch``, then -F_y until ``t_total``."""

    force_y: float
    t_switch: float
    t_total: float
    mass: float
    start: EndPoint

    @property
    def lateral_accel(self) -> float:
        return self.force_y / self.mass

    @property
    def goal(self) -> EndPoint:
        return sample_segment(self, self.t_total)


def _switch_time(accel: float, t_total: float, yd0: float, ydg: float) -> float:
    return 0.5 * ((ydg - yd0) / accel + t_total)


def plan_segment(p_s: EndPoint, p_g: EndPoint, mass: float = DEFAULT_MASS) -> SegmentLaw:
    """Plan the minimum-force single-switch lateral law between two end states.

    Both roots of the lateral-force quadratic are tried; the one whose switch
    time lies in [0, T] and that reproduces the goal is kept, preferring the
    smaller force and then the sign of the lateral shift.

    Raises:
        InfeasibleSegmentError: If the goal is not ahead, the speed is not
            positive, or neither root yields a valid switch time.
    """
    if p_s.x_dot <= 0:
        raise InfeasibleSegmentError(f"Longitudinal speed must be positive, got {p_s.x_dot}")
    if p_g.x <= p_s.x:
        raise InfeasibleSegmentError(f"Goal x {p_g.x} must lie ahead of start x {p_s.x}")

    t_total = (p_g.x - p_s.x) / p_s.x_dot
    dy = p_g.y - p_s.y
    yd0, ydg = p_s.y_dot, p_g.y_dot

    # Pure drift: the start velocity already carries the mass onto the goal.
    if abs(ydg - yd0) <= STRAIGHT_TOL and abs(dy - yd0 * t_total) <= STRAIGHT_TOL:
        return SegmentLaw(0.0, 0.5 * t_total, t_total, mass, p_s)

    big_a = (
        t_total**2 * (yd0**2 + ydg**2)
        - 2.0 * t_total * dy * (ydg + yd0)
        + 2.0 * dy**2
    )
    if big_a < 0:
        if big_a < -1e-12 * max(1.0, t_total**2):
            raise InfeasibleSegmentError(f"No real lateral force solution (A = {big_a:.3e})")
        big_a = 0.0
    root = math.sqrt(2.0 * big_a)
    base = 2.0 * dy - t_total * (ydg + yd0)

    candidates: list[tuple[float, float, float]] = []
    for sign in (-1.0, 1.0):
        accel = (sign * root + base) / t_total**2
        if abs(accel) <= 1e-15:
            continue
        t_switch = _switch_time(accel, t_total, yd0, ydg)
        if t_switch < -1e-9 * t_total or t_switch > t_total * (1.0 + 1e-9):
            continue
        t_switch = min(max(t_switch, 0.0), t_total)
        law = SegmentLaw(accel * mass, t_switch, t_total, mass, p_s)
        end = law.goal
        scale = max(1.0, abs(dy), abs(ydg))
        if abs(end.y - p_g.y) > ENDPOINT_TOL * scale or abs(end.y_dot - ydg) > ENDPOINT_TOL * scale:
            continue
        tie = 0.0 if math.copysign(1.0, accel) == math.copysign(1.0, dy) else 1.0
        candidates.append((abs(accel), tie, accel))

    if not candidates:
        raise InfeasibleSegmentError(
            f"No switch time in [0, {t_total:.3f}] s joins y={p_s.y:.3f} to y={p_g.y:.3f}"
        )
    _, _, accel = min(candidates)
    t_switch = min(max(_switch_time(accel, t_total, yd0, ydg), 0.0), t_total)
    return SegmentLaw(accel * mass, t_switch, t_total, mass, p_s)


def sample_segment_many(law: SegmentLaw, t: np.ndarray) -> tuple[np.ndarray, ...]:
    """Vectorised piecewise-quadratic evaluation; ``t`` must lie in [0, T]."""
    t = np.asarray(t, dtype=float)
    p = law.start
    a = law.lateral_accel
    ts = law.t_switch
    y_sw = p.y + p.y_dot * ts + 0.5 * a * ts**2
    yd_sw = p.y_dot + a * ts
    tau = t - ts
    first = t <= ts
    y = np.where(first, p.y + p.y_dot * t + 0.5 * a * t**2, y_sw + yd_sw * tau - 0.5 * a * tau**2)
    y_dot = np.where(first, p.y_dot + a * t, p.y_dot + a * (2.0 * ts - t))
    x = p.x + p.x_dot * t
    return x, y, np.full_like(t, p.x_dot), y_dot


def sample_segment(law: SegmentLaw, t: float) -> EndPoint:
    """State of a segment at time ``t``.

    Raises:
        SampleRangeError: If ``t`` is outside [0, T].
    """
    if t < 0 or t > law.t_total * (1.0 + 1e-12):
        raise SampleRangeError(f"t={t} outside [0, {law.t_total}]")
    x, y, x_dot, y_dot = sample_segment_many(law, np.array([t]))
    return EndPoint(float(x[0]), float(y[0]), float(x_dot[0]), float(y_dot[0]))


def time_grid(t_total: float, dt: float) -> np.ndarray:
    """Uniform grid from 0 with spacing ``dt`` whose last sample is exactly ``t_total``."""
    n = int(math.floor(t_total / dt + 1e-9))
    grid = np.arange(n + 1) * dt
    if t_total - grid[-1] > 1e-9:
        grid = np.append(grid, t_total)
    else:
        grid[-1] = t_total
    return grid


@dataclass(frozen=True)
class Maneuver:
    """A road-aligned trajectory sampled on a uniform time grid.

    ``speed`` is the expected speed along the path; ``speed_limit`` is the
    ceiling that profile is chasing (equal to ``speed`` until re-planned).
    """

    kind: ManeuverKind
    segments: tuple[SegmentLaw, ...]
    t: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    x_dot: np.ndarray = field(repr=False)
    y_dot: np.ndarray = field(repr=False)
    speed: np.ndarray = field(repr=False)
    speed_limit: np.ndarray = field(repr=False)
    dt: float = DEFAULT_DT
    target_y: float | None = None
    infeasible: bool = False

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    @property
    def heading(self) -> np.ndarray:
        return np.arctan2(self.y_dot, self.x_dot)

    @property
    def peak_lateral_accel(self) -> float:
        """Largest |F_y| / m over the segments; 0 for extrapolated paths."""
        return max((abs(s.lateral_accel) for s in self.segments), default=0.0)

    @property
    def path_length(self) -> float:
        return float(np.sum(np.hypot(np.diff(self.x), np.diff(self.y))))

    def speed_at(self, t: float) -> float:
        return float(np.interp(t, self.t, self.speed))

    def limit_at(self, t: float) -> float:
        return float(np.interp(t, self.t, self.speed_limit))

    def y_at_x(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.x, self.y)


def sample_maneuver(
    segments: tuple[SegmentLaw, ...],
    dt: float = DEFAULT_DT,
    kind: ManeuverKind = ManeuverKind.LATERAL_SHIFT,
    target_y: float | None = None,
) -> Maneuver:
    """Sample chained segment laws on a uniform grid ending at the total time."""
    starts = np.concatenate([[0.0], np.cumsum([s.t_total for s in segments])])
    grid = time_grid(float(starts[-1]), dt)
    idx = np.clip(np.searchsorted(starts, grid, side="right") - 1, 0, len(segments) - 1)
    x = np.empty_like(grid)
    y = np.empty_like(grid)
    x_dot = np.empty_like(grid)
    y_dot = np.empty_like(grid)
    for j, law in enumerate(segments):
        mask = idx == j
        if not np.any(mask):
            continue
        local = np.clip(grid[mask] - starts[j], 0.0, law.t_total)
        x[mask], y[mask], x_dot[mask], y_dot[mask] = sample_segment_many(law, local)
    speed = np.hypot(x_dot, y_dot)
    return Maneuver(kind, segments, grid, x, y, x_dot, y_dot, speed, speed.copy(), dt, target_y)


def connect_points(
    points: list[EndPoint],
    mass: float = DEFAULT_MASS,
    dt: float = DEFAULT_DT,
    kind: ManeuverKind = ManeuverKind.LATERAL_SHIFT,
    target_y: float | None = None,
) -> Maneuver:
    """Join consecutive end points with bang-bang segments.

    Each segment after the first starts from the previous goal, so position
    and velocity are continuous at every joint.

    Raises:
        InfeasibleSegmentError: Fewer than two points, non-increasing x, or an
            infeasible pair.
    """
    if len(points) < 2:
        raise InfeasibleSegmentError("A maneuver needs at least two points")
    segments: list[SegmentLaw] = []
    start = points[0]
    for goal in points[1:]:
        # Constant longitudinal speed per segment.
        goal = replace(goal, x_dot=start.x_dot)
        law = plan_segment(start, goal, mass)
        segments.append(law)
        start = replace(law.goal, x=goal.x, y=goal.y, y_dot=goal.y_dot)
    return sample_maneuver(tuple(segments), dt, kind, target_y)


class AccelModel(Protocol):
    """Longitudinal capability: full-throttle acceleration a(v) >= 0 up to ``v_max``."""

    v_max: float

    def accel(self, v: np.ndarray | float) -> np.ndarray | float: ...


@dataclass(frozen=True)
class ConstantAccel:
    """a(v) = ``a`` below ``v_max``."""

    a: float
    v_max: float

    def accel(self, v: np.ndarray | float) -> np.ndarray | float:
        return np.where(np.asarray(v) < self.v_max, self.a, 0.0)


class SpeedTable:
    """Distance-parameterised solution of dv/ds = a(v) / v.

    Because the ODE is autonomous, one table of distance-to-reach-speed serves
    every initial speed: v(s; v0) = V(S(v0) + s).
    """

    def __init__(self, model: AccelModel, v_floor: float = 0.5, n: int = 4000):
        self.v_max = float(model.v_max)
        v_hi = self.v_max * (1.0 - 1e-6)
        grid = self.v_max - np.geomspace(self.v_max - v_floor, self.v_max - v_hi, n)

        def rhs(v: float, _state: np.ndarray) -> list[float]:
            a = float(model.accel(v))
            if a <= 0:
                raise ValueError(f"Acceleration model must be positive below v_max (v={v:.3f})")
            return [v / a]

        sol = solve_ivp(
            rhs, (grid[0], grid[-1]), [0.0], t_eval=grid, method="DOP853", rtol=1e-10, atol=1e-10
        )
        self.v_grid = grid
        self.s_grid = sol.y[0]

    def advance(self, v0: np.ndarray | float, distance: np.ndarray | float) -> np.ndarray:
        """Speed after accelerating over ``distance`` from ``v0``, capped at ``v_max``."""
        s0 = np.interp(v0, self.v_grid, self.s_grid)
        target = s0 + np.asarray(distance, dtype=float)
        v = np.interp(target, self.s_grid, self.v_grid)
        v = np.where(target >= self.s_grid[-1], self.v_max, v)
        return np.where(np.asarray(v0) >= self.v_max, self.v_max, np.maximum(v, v0))

    def distance_to(self, v: np.ndarray | float) -> np.ndarray:
        """Table distance needed to reach ``v``; infinite at or above ``v_max``."""
        v = np.asarray(v, dtype=float)
        s = np.interp(v, self.v_grid, self.s_grid)
        return np.where(v >= self.v_grid[-1], np.inf, s)

    def speed_at(self, distance: np.ndarray) -> np.ndarray:
        v = np.interp(distance, self.s_grid, self.v_grid)
        return np.where(distance >= self.s_grid[-1], self.v_max, v)

    def capped_profile(self, v0: float, s: np.ndarray, limit: np.ndarray) -> np.ndarray:
        """Full-throttle speeds along arc lengths ``s`` that never pass ``limit``.

        In table distance the capped recursion sigma_i = min(sigma_{i-1} + ds, S(limit_i))
        is s_i plus a running minimum of S(limit_j) - s_j.
        """
        reach = self.distance_to(limit) - s
        reach[0] = float(self.distance_to(min(v0, self.v_max))) - s[0]
        speed = self.speed_at(s + np.minimum.accumulate(reach))
        speed[0] = min(v0, self.v_max)
        return speed


@lru_cache(maxsize=64)
def speed_table(model: AccelModel) -> SpeedTable:
    return SpeedTable(model)


def path_arc_length(man: Maneuver) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(man.x), np.diff(man.y)))])


def retime(man: Maneuver, speed: np.ndarray, speed_limit: np.ndarray, **changes) -> Maneuver:
    """Re-derive sample times for new path speeds and resample on the uniform grid.

    ``speed`` and ``speed_limit`` are given at the maneuver's current samples;
    the geometric path is unchanged.
    """
    speed = np.maximum(np.asarray(speed, dtype=float), 1e-3)
    ds = np.diff(path_arc_length(man))
    t_path = np.concatenate([[0.0], np.cumsum(2.0 * ds / (speed[:-1] + speed[1:]))])
    grid = time_grid(float(t_path[-1]), man.dt)

    direction = np.hypot(man.x_dot, man.y_dot)
    ux = np.interp(grid, t_path, man.x_dot / np.maximum(direction, 1e-12))
    uy = np.interp(grid, t_path, man.y_dot / np.maximum(direction, 1e-12))
    norm = np.maximum(np.hypot(ux, uy), 1e-12)
    v = np.interp(grid, t_path, speed)
    return replace(
        man,
        t=grid,
        x=np.interp(grid, t_path, man.x),
        y=np.interp(grid, t_path, man.y),
        x_dot=v * ux / norm,
        y_dot=v * uy / norm,
        speed=v,
        speed_limit=np.interp(grid, t_path, speed_limit),
        **changes,
    )


def braking_envelope(limit: np.ndarray, s: np.ndarray, decel: float) -> np.ndarray:
    """Backward pass: lower a speed ceiling so each drop is reachable at ``decel``."""
    reach = np.asarray(limit, dtype=float) ** 2 + 2.0 * decel * s
    floor = np.minimum.accumulate(reach[::-1])[::-1]
    return np.sqrt(np.maximum(floor - 2.0 * decel * s, 0.0))


def replan_velocity(
    man: Maneuver,
    v0: float,
    accel_model: AccelModel,
    speed_cap: np.ndarray | None = None,
    decel: float | None = None,
) -> Maneuver:
    """Re-plan the speed profile for a vehicle accelerating at full throttle.

    Speed follows dv/ds = a(v)/v from ``v0``, never exceeding ``v_max`` or the
    optional per-sample ``speed_cap``. With a cap and ``decel`` the cap is
    first made reachable by a backward braking pass.

    Raises:
        ValueError: If ``v0`` is not positive.
    """
    if v0 <= 0:
        raise ValueError(f"Initial speed must be positive, got {v0}")
    table = speed_table(accel_model)
    s = path_arc_length(man)

    if speed_cap is None:
        limit = np.full_like(s, table.v_max)
        speed = np.minimum(table.advance(v0, s), table.v_max)
        return retime(man, speed, limit)

    limit = np.minimum(np.asarray(speed_cap, dtype=float), table.v_max)
    if decel is not None:
        limit = braking_envelope(limit, s, decel)
    speed = table.capped_profile(v0, s, limit)
    return retime(man, speed, limit)


def extend_to(man: Maneuver, t_end: float) -> Maneuver:
    """Extend a maneuver past its end at its final velocity up to ``t_end``."""
    if t_end <= man.duration + 1e-12:
        return man
    extra = time_grid(t_end, man.dt)
    extra = extra[extra > man.duration + 1e-9]
    tau = extra - man.duration
    return replace(
        man,
        t=np.concatenate([man.t, extra]),
        x=np.concatenate([man.x, man.x[-1] + man.x_dot[-1] * tau]),
        y=np.concatenate([man.y, man.y[-1] + man.y_dot[-1] * tau]),
        x_dot=np.concatenate([man.x_dot, np.full_like(tau, man.x_dot[-1])]),
        y_dot=np.concatenate([man.y_dot, np.full_like(tau, man.y_dot[-1])]),
        speed=np.concatenate([man.speed, np.full_like(tau, man.speed[-1])]),
        speed_limit=np.concatenate([man.speed_limit, np.full_like(tau, man.speed_limit[-1])]),
    )
