"""Rectangular safety bounds and time-synchronised collision checks."""

import logging
from dataclasses import dataclass, replace
from functools import cache

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .pointmass import Maneuver, path_arc_length, retime

logger = logging.getLogger(__name__)


class GridMismatchError(ValueError):
    """Raised when two maneuvers are not sampled on the same time grid."""


class SafetyParams(BaseModel):
    """Margins as fractions of the vehicle footprint."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    front_factor: float = Field(default=0.3, ge=0)
    rear_factor: float = Field(default=0.3, ge=0)
    side_factor: float = Field(default=0.5, ge=0)
    check_midpoints: bool = True
    min_speed: float = Field(default=2.0, gt=0)


@dataclass(frozen=True)
class SafetyBound:
    """Vehicle body inflated by front, rear and side margins."""

    body_length: float
    body_width: float
    front_margin: float = 0.0
    rear_margin: float = 0.0
    side_margin: float = 0.0

    def __post_init__(self):
        if self.body_length <= 0 or self.body_width <= 0:
            raise ValueError("Safety bound body dimensions must be positive")
        if min(self.front_margin, self.rear_margin, self.side_margin) < 0:
            raise ValueError("Safety margins must be non-negative")

    @classmethod
    def for_vehicle(
        cls, length: float, width: float, params: SafetyParams | None = None
    ) -> "SafetyBound":
        params = params or SafetyParams()
        bound = cls(
            body_length=length,
            body_width=width,
            front_margin=params.front_factor * length,
            rear_margin=params.rear_factor * length,
            side_margin=params.side_factor * width,
        )
        _note_margin_rule(bound)
        return bound

    @property
    def half_length(self) -> float:
        return 0.5 * (self.body_length + self.front_margin + self.rear_margin)

    @property
    def half_width(self) -> float:
        return 0.5 * self.body_width + self.side_margin

    @property
    def center_shift(self) -> float:
        """Forward offset of the bound's center from the vehicle's center."""
        return 0.5 * (self.front_margin - self.rear_margin)

    def body(self) -> "SafetyBound":
        return SafetyBound(self.body_length, self.body_width)


@cache
def _note_margin_rule(bound: SafetyBound) -> None:
    gap = bound.front_margin + bound.rear_margin
    logger.info(
        "Safety bound %.1f m x %.1f m leaves a %.1f m bumper gap between bounded cars; "
        "a 6 m longitudinal gap would need 0.6 x length margins",
        2 * bound.half_length, 2 * bound.half_width, gap,
    )


@dataclass(frozen=True)
class CollisionReport:
    collides: bool
    first_time: float | None = None
    opponent_id: int = -1
    min_clearance: float = 0.0


def separation(
    xa, ya, ha, bound_a: SafetyBound, xb, yb, hb, bound_b: SafetyBound
) -> np.ndarray:
    """Separating-axis gap between two oriented rectangles, vectorised.

    Positive where a separating axis exists (the value is the largest gap
    found on the four face normals); zero or negative means overlap,
    touching included.
    """
    ha = np.asarray(ha, dtype=float)
    hb = np.asarray(hb, dtype=float)
    ua = np.stack([np.cos(ha), np.sin(ha)])
    va = np.stack([-np.sin(ha), np.cos(ha)])
    ub = np.stack([np.cos(hb), np.sin(hb)])
    vb = np.stack([-np.sin(hb), np.cos(hb)])
    ca = np.stack([np.asarray(xa, dtype=float), np.asarray(ya, dtype=float)])
    cb = np.stack([np.asarray(xb, dtype=float), np.asarray(yb, dtype=float)])
    ca = ca + bound_a.center_shift * ua
    cb = cb + bound_b.center_shift * ub
    d = cb - ca

    gaps = []
    for axis in (ua, va, ub, vb):
        reach = (
            bound_a.half_length * np.abs(np.sum(ua * axis, axis=0))
            + bound_a.half_width * np.abs(np.sum(va * axis, axis=0))
            + bound_b.half_length * np.abs(np.sum(ub * axis, axis=0))
            + bound_b.half_width * np.abs(np.sum(vb * axis, axis=0))
        )
        gaps.append(np.abs(np.sum(d * axis, axis=0)) - reach)
    return np.max(np.stack(gaps), axis=0)


def bounds_overlap(
    pose_a: tuple[float, float, float],
    bound_a: SafetyBound,
    pose_b: tuple[float, float, float],
    bound_b: SafetyBound,
) -> bool:
    """True iff two (x, y, heading) poses' bounds intersect; touching counts."""
    gap = separation(*pose_a, bound_a, *pose_b, bound_b)
    return bool(gap <= 0.0)


def _samples(man: Maneuver, n: int, midpoints: bool) -> tuple[np.ndarray, ...]:
    x, y = man.x[:n], man.y[:n]
    heading = np.arctan2(man.y_dot[:n], man.x_dot[:n])
    t = man.t[:n]
    if not midpoints or n < 2:
        return t, x, y, heading
    mid_h = np.arctan2(
        man.y_dot[: n - 1] + man.y_dot[1:n], man.x_dot[: n - 1] + man.x_dot[1:n]
    )
    order = np.argsort(np.concatenate([t, 0.5 * (t[:-1] + t[1:])]), kind="stable")

    def join(a: np.ndarray, m: np.ndarray) -> np.ndarray:
        return np.concatenate([a, m])[order]

    return (
        join(t, 0.5 * (t[:-1] + t[1:])),
        join(x, 0.5 * (x[:-1] + x[1:])),
        join(y, 0.5 * (y[:-1] + y[1:])),
        join(heading, mid_h),
    )


def trajectories_collide(
    c1: Maneuver,
    c2: Maneuver,
    bound1: SafetyBound,
    bound2: SafetyBound | None = None,
    opponent_id: int = -1,
    check_midpoints: bool = True,
) -> CollisionReport:
    """Check two maneuvers for bound overlap at the same sample times.

    Only the common time span is compared; interval midpoints are checked too
    when ``check_midpoints`` is set.

    Raises:
        GridMismatchError: If the time steps or start times differ.
    """
    bound2 = bound2 or bound1
    if abs(c1.dt - c2.dt) > 1e-9 or abs(c1.t[0] - c2.t[0]) > 1e-9:
        raise GridMismatchError(
            f"Time grids differ: dt {c1.dt} vs {c2.dt}, start {c1.t[0]} vs {c2.t[0]}"
        )
    n = min(len(c1.t), len(c2.t))
    t, xa, ya, ha = _samples(c1, n, check_midpoints)
    _, xb, yb, hb = _samples(c2, n, check_midpoints)
    gap = separation(xa, ya, ha, bound1, xb, yb, hb, bound2)
    hit = gap <= 0.0
    if not np.any(hit):
        return CollisionReport(False, None, opponent_id, float(np.min(gap)))
    first = int(np.argmax(hit))
    # Clearance before contact ranks colliding candidates in the fallback.
    before = float(np.min(gap[:first])) if first > 0 else 0.0
    return CollisionReport(True, float(t[first]), opponent_id, before)


def braking_profile(s: np.ndarray, v0: float, v_target: float, decel: float) -> np.ndarray:
    """v(s) = max(v_target, sqrt(v0^2 - 2 b s)): brake from ``v0`` then hold."""
    return np.maximum(v_target, np.sqrt(np.maximum(v0**2 - 2.0 * decel * s, 0.0)))


def reduce_speed_to_avoid(
    cand: Maneuver,
    pred: Maneuver,
    bound: SafetyBound,
    decel: float,
    opp_bound: SafetyBound | None = None,
    min_speed: float = 2.0,
    check_midpoints: bool = True,
) -> Maneuver:
    """Slow a blocked candidate down to follow the blocking vehicle.

    Tries braking to the blocker's speed at the conflict, then progressively
    lower hold speeds down to ``min_speed``. The first profile that clears
    the prediction at every sample is returned with its reduced speed as the
    new ceiling; if none does, the full-braking candidate comes back marked
    infeasible.
    """
    first = trajectories_collide(cand, pred, bound, opp_bound, check_midpoints=check_midpoints)
    if not first.collides:
        return cand

    s = path_arc_length(cand)
    v0 = float(cand.speed[0])
    v_block = float(np.interp(first.first_time, pred.t, pred.speed))
    targets = [min(v_block, v0)]
    targets += [v for v in np.linspace(targets[0], min_speed, 6)[1:]]

    reduced = cand
    for v_target in targets:
        ceiling = braking_profile(s, v0, v_target, decel)
        speed = np.minimum(cand.speed, ceiling)
        limit = np.minimum(cand.speed_limit, ceiling)
        reduced = retime(cand, speed, limit)
        report = trajectories_collide(
            reduced, pred, bound, opp_bound, check_midpoints=check_midpoints
        )
        if not report.collides:
            logger.debug("Reduced candidate to %.2f m/s to clear blocker", v_target)
            return reduced
    return replace(reduced, infeasible=True)


def is_fully_blocked_behind(
    ego_y: float,
    opp_x: float,
    opp_y: float,
    bound: SafetyBound,
    opp_bound: SafetyBound | None = None,
) -> bool:
    """True for an opponent behind whose body lies inside the ego's lateral bound span."""
    if opp_x >= 0:
        return False
    opp_half = 0.5 * (opp_bound or bound).body_width
    lo, hi = ego_y - bound.half_width, ego_y + bound.half_width
    return opp_y - opp_half >= lo - 1e-9 and opp_y + opp_half <= hi + 1e-9

