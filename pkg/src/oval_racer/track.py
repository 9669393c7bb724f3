"""Closed-track geometry and road-aligned coordinates.

The track is described by its left boundary: an ordered list of straights and
circular arcs (positive sweep turns left). The drivable surface extends
``width`` meters to the right of that boundary. Road-aligned coordinates
``(x, y)`` measure arc length along the left boundary relative to an ego
station and the normal offset from the left boundary into the track.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

CLOSURE_POS_TOL = 1e-6
CLOSURE_HEADING_TOL = 1e-8
_ON_SEGMENT_TOL = 1e-7


class TrackConfigError(ValueError):
    """Raised when a segment list does not describe a valid closed track."""


class ProjectionError(ValueError):
    """Raised when a point is too far from the track to project uniquely."""


class OffTrackError(ValueError):
    """Raised when a road-aligned offset lies outside the track width."""


class SegmentKind(str, Enum):
    """Track segment shapes."""

    STRAIGHT = "straight"
    ARC = "arc"


@dataclass(frozen=True)
class Segment:
    """One piece of the left boundary."""

    kind: SegmentKind
    length: float = 0.0
    radius: float = 0.0
    sweep: float = 0.0

    @classmethod
    def straight(cls, length: float) -> "Segment":
        return cls(kind=SegmentKind.STRAIGHT, length=length)

    @classmethod
    def arc(cls, radius: float, sweep_deg: float) -> "Segment":
        return cls(kind=SegmentKind.ARC, radius=radius, sweep=math.radians(sweep_deg))

    @property
    def arc_length(self) -> float:
        if self.kind == SegmentKind.STRAIGHT:
            return self.length
        return abs(self.sweep) * self.radius

    @property
    def curvature(self) -> float:
        """Signed curvature of the left boundary (positive = left turn)."""
        if self.kind == SegmentKind.STRAIGHT:
            return 0.0
        return math.copysign(1.0 / self.radius, self.sweep)


@dataclass(frozen=True)
class TrackConfig:
    """Unvalidated track description: boundary segments plus width."""

    width: float
    segments: tuple[Segment, ...]


@dataclass(frozen=True)
class CartesianPoint:
    """World-frame position and velocity."""

    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0

    @property
    def heading(self) -> float:
        return math.atan2(self.vy, self.vx)

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class RaPoint:
    """Road-aligned kinematic state relative to an ego station."""

    x: float
    y: float
    x_dot: float = 0.0
    y_dot: float = 0.0


@dataclass(frozen=True)
class TrackModel:
    """Validated closed track. Build with :func:`build_track`."""

    segments: tuple[Segment, ...]
    width: float
    total_length: float
    seg_start_s: np.ndarray = field(repr=False)
    seg_start_x: np.ndarray = field(repr=False)
    seg_start_y: np.ndarray = field(repr=False)
    seg_start_h: np.ndarray = field(repr=False)
    seg_length: np.ndarray = field(repr=False)
    seg_curvature: np.ndarray = field(repr=False)

    @property
    def min_radius(self) -> float:
        radii = [s.radius for s in self.segments if s.kind == SegmentKind.ARC]
        return min(radii) if radii else math.inf

    def wrap(self, dx: np.ndarray | float) -> np.ndarray | float:
        """Wrap an along-track difference into (-L/2, L/2]."""
        half = 0.5 * self.total_length
        return half - np.mod(half - dx, self.total_length)

    def _segment_index(self, s: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.seg_start_s, s, side="right") - 1
        return np.clip(idx, 0, len(self.segments) - 1)

    def boundary_pose(self, stations: np.ndarray | float) -> tuple[np.ndarray, ...]:
        """Left-boundary position and tangent heading at the given stations."""
        s = np.mod(np.asarray(stations, dtype=float), self.total_length)
        idx = self._segment_index(s)
        d = s - self.seg_start_s[idx]
        k = self.seg_curvature[idx]
        h0 = self.seg_start_h[idx]
        x0 = self.seg_start_x[idx]
        y0 = self.seg_start_y[idx]

        heading = h0 + k * d
        is_arc = np.abs(k) > 0.0
        k_safe = np.where(is_arc, k, 1.0)
        x_arc = x0 + (np.sin(heading) - np.sin(h0)) / k_safe
        y_arc = y0 - (np.cos(heading) - np.cos(h0)) / k_safe
        x = np.where(is_arc, x_arc, x0 + d * np.cos(h0))
        y = np.where(is_arc, y_arc, y0 + d * np.sin(h0))
        return x, y, heading

    def curvature_at(
        self, stations: np.ndarray | float, offsets: np.ndarray | float
    ) -> np.ndarray:
        """Signed path curvature of a line running parallel to the left boundary."""
        s = np.mod(np.asarray(stations, dtype=float), self.total_length)
        k = self.seg_curvature[self._segment_index(s)]
        # Parallel curve at offset y to the right: radius 1/k + y for left turns.
        return k / (1.0 + k * np.asarray(offsets, dtype=float))

    def points_at(
        self, stations: np.ndarray | float, offsets: np.ndarray | float
    ) -> tuple[np.ndarray, ...]:
        """Cartesian points at (station, offset) plus the local tangent heading."""
        bx, by, heading = self.boundary_pose(stations)
        y = np.asarray(offsets, dtype=float)
        return bx + y * np.sin(heading), by - y * np.cos(heading), heading

    def project(self, px: np.ndarray | float, py: np.ndarray | float) -> tuple[np.ndarray, ...]:
        """Project world points onto the left boundary.

        Returns:
            (station, offset, heading) arrays; station in [0, L).

        Raises:
            ProjectionError: If any point is farther from the centerline than
                the smallest arc radius.
        """
        px = np.atleast_1d(np.asarray(px, dtype=float))
        py = np.atleast_1d(np.asarray(py, dtype=float))
        n_seg = len(self.segments)
        d_all = np.empty((n_seg, px.size))
        y_all = np.empty((n_seg, px.size))
        h_all = np.empty((n_seg, px.size))

        for j in range(n_seg):
            x0, y0, h0 = self.seg_start_x[j], self.seg_start_y[j], self.seg_start_h[j]
            k = self.seg_curvature[j]
            if k == 0.0:
                dx, dy = px - x0, py - y0
                d_all[j] = dx * math.cos(h0) + dy * math.sin(h0)
                y_all[j] = dx * math.sin(h0) - dy * math.cos(h0)
                h_all[j] = h0
                continue
            radius = 1.0 / abs(k)
            sigma = math.copysign(1.0, k)
            cx = x0 - math.sin(h0) / k
            cy = y0 + math.cos(h0) / k
            rx, ry = px - cx, py - cy
            heading = np.arctan2(ry, rx) + sigma * 0.5 * math.pi
            sweep = abs(self.segments[j].sweep)
            half_gap = 0.5 * (2.0 * math.pi - sweep)
            dd = np.mod(sigma * (heading - h0) + half_gap, 2.0 * math.pi) - half_gap
            d_all[j] = dd * radius
            y_all[j] = sigma * (np.hypot(rx, ry) - radius)
            h_all[j] = h0 + sigma * dd

        seg_len = self.seg_length[:, None]
        penalty = np.maximum(np.maximum(-d_all, d_all - seg_len), 0.0)
        lateral = np.abs(y_all - 0.5 * self.width)
        score = np.where(penalty <= _ON_SEGMENT_TOL, lateral, np.inf)
        # Non-convex fallback: nearest segment by longitudinal overshoot.
        score = np.where(np.isinf(score).all(axis=0), penalty + lateral, score)
        best = np.argmin(score, axis=0)
        cols = np.arange(px.size)

        offset = y_all[best, cols]
        if np.any(np.abs(offset - 0.5 * self.width) >= self.min_radius):
            raise ProjectionError(
                f"Point lies farther than {self.min_radius:.1f} m from the centerline"
            )
        d = np.clip(d_all[best, cols], 0.0, self.seg_length[best])
        station = np.mod(self.seg_start_s[best] + d, self.total_length)
        return station, offset, h_all[best, cols]


def build_track(config: TrackConfig) -> TrackModel:
    """Validate a segment list and precompute segment start poses.

    Raises:
        TrackConfigError: On an empty list, non-positive dimensions, an arc
            radius not larger than the width, or a loop that does not close.
    """
    if not config.segments:
        raise TrackConfigError("Track needs at least one segment")
    if config.width <= 0:
        raise TrackConfigError(f"Track width must be positive, got {config.width}")

    starts_s, starts_x, starts_y, starts_h = [], [], [], []
    x = y = h = s = 0.0
    for seg in config.segments:
        if seg.kind == SegmentKind.STRAIGHT and seg.length <= 0:
            raise TrackConfigError(f"Straight length must be positive, got {seg.length}")
        if seg.kind == SegmentKind.ARC:
            if seg.radius <= 0 or seg.sweep == 0:
                raise TrackConfigError("Arc radius and sweep must be non-zero and positive")
            if seg.radius <= config.width:
                raise TrackConfigError(
                    f"Arc radius {seg.radius} m must exceed track width {config.width} m"
                )
        starts_s.append(s)
        starts_x.append(x)
        starts_y.append(y)
        starts_h.append(h)

        if seg.kind == SegmentKind.STRAIGHT:
            x += seg.length * math.cos(h)
            y += seg.length * math.sin(h)
        else:
            k = seg.curvature
            h_end = h + seg.sweep
            x += (math.sin(h_end) - math.sin(h)) / k
            y -= (math.cos(h_end) - math.cos(h)) / k
            h = h_end
        s += seg.arc_length

    heading_err = abs(math.remainder(h, 2.0 * math.pi))
    if math.hypot(x, y) > CLOSURE_POS_TOL or heading_err > CLOSURE_HEADING_TOL:
        raise TrackConfigError(
            f"Track loop does not close: end pose misses start by "
            f"{math.hypot(x, y):.6f} m and {heading_err:.2e} rad"
        )

    return TrackModel(
        segments=tuple(config.segments),
        width=float(config.width),
        total_length=s,
        seg_start_s=np.array(starts_s),
        seg_start_x=np.array(starts_x),
        seg_start_y=np.array(starts_y),
        seg_start_h=np.array(starts_h),
        seg_length=np.array([seg.arc_length for seg in config.segments]),
        seg_curvature=np.array([seg.curvature for seg in config.segments]),
    )


def default_track_config() -> TrackConfig:
    """IMS-like oval: two 1006 m straights joined by 180-degree turns of two 90-degree arcs.

    The survey geometry of the real speedway is not public; radius 320 m puts
    the lap length at about 4023 m with a 14 m wide surface.
    """
    turn = (Segment.arc(320.0, 90.0), Segment.arc(320.0, 90.0))
    return TrackConfig(
        width=14.0,
        segments=(Segment.straight(1006.0), *turn, Segment.straight(1006.0), *turn),
    )


def parse_track_config(text: str, source: str = "<string>") -> TrackConfig:
    """Parse ``width``/``straight``/``arc`` lines. ``#`` starts a comment."""
    width: float | None = None
    segments: list[Segment] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            keyword, values = parts[0].lower(), [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise TrackConfigError(f"{source}:{lineno}: non-numeric value in '{line}'") from exc
        if keyword == "width" and len(values) == 1:
            width = values[0]
        elif keyword == "straight" and len(values) == 1:
            segments.append(Segment.straight(values[0]))
        elif keyword == "arc" and len(values) == 2:
            segments.append(Segment.arc(values[0], values[1]))
        else:
            raise TrackConfigError(f"{source}:{lineno}: cannot parse '{line}'")
    if width is None:
        raise TrackConfigError(f"{source}: missing 'width <m>' line")
    return TrackConfig(width=width, segments=tuple(segments))


def load_track(path: Path | None = None) -> TrackModel:
    """Load and build a track from a config file, or the default oval."""
    if path is None:
        return build_track(default_track_config())
    return build_track(parse_track_config(Path(path).read_text(), source=str(path)))


def to_road_aligned(track: TrackModel, ego_station: float, p: CartesianPoint) -> RaPoint:
    """Convert a world point/velocity into ego-relative road-aligned coordinates."""
    station, offset, heading = track.project(p.x, p.y)
    h = float(heading[0])
    c, s = math.cos(h), math.sin(h)
    return RaPoint(
        x=float(track.wrap(station[0] - ego_station)),
        y=float(offset[0]),
        x_dot=p.vx * c + p.vy * s,
        y_dot=p.vx * s - p.vy * c,
    )


def to_cartesian(track: TrackModel, ego_station: float, q: RaPoint) -> CartesianPoint:
    """Inverse of :func:`to_road_aligned` for on-track points.

    Raises:
        OffTrackError: If ``q.y`` is outside [0, width].
    """
    if q.y < -1e-9 or q.y > track.width + 1e-9:
        raise OffTrackError(f"Offset {q.y:.3f} m outside track width {track.width} m")
    x, y, heading = track.points_at(ego_station + q.x, q.y)
    h = float(heading)
    c, s = math.cos(h), math.sin(h)
    return CartesianPoint(
        x=float(x),
        y=float(y),
        vx=q.x_dot * c + q.y_dot * s,
        vy=q.x_dot * s - q.y_dot * c,
    )


@dataclass(frozen=True)
class RoadFrame:
    """A track plus the ego station that anchors road-aligned coordinates."""

    track: TrackModel
    ego_station: float

    @property
    def width(self) -> float:
        return self.track.width

    def to_road_aligned(self, p: CartesianPoint) -> RaPoint:
        return to_road_aligned(self.track, self.ego_station, p)

    def to_cartesian(self, q: RaPoint) -> CartesianPoint:
        return to_cartesian(self.track, self.ego_station, q)

    def road_aligned_many(self, px: np.ndarray, py: np.ndarray) -> tuple[np.ndarray, ...]:
        """Vectorised position conversion: (x, y, local heading)."""
        station, offset, heading = self.track.project(px, py)
        return self.track.wrap(station - self.ego_station), offset, heading

    def cartesian_many(self, xr: np.ndarray, yr: np.ndarray) -> tuple[np.ndarray, ...]:
        """Vectorised inverse position conversion without the on-track check."""
        return self.track.points_at(self.ego_station + np.asarray(xr), yr)

    def curvature(self, xr: np.ndarray, yr: np.ndarray) -> np.ndarray:
        return self.track.curvature_at(self.ego_station + np.asarray(xr), yr)
