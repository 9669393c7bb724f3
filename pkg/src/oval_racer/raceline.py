"""Offline race line: parametric out-in-out generation, CSV persistence and lookup."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.interpolate import PchipInterpolator

from .track import SegmentKind, TrackModel
from .vehicle import VehicleParams

logger = logging.getLogger(__name__)

CSV_HEADER = "s,x,y,v"


class RaceLineError(ValueError):
    """Raised for malformed or invalid race line data."""


class InfeasibleInsetError(RaceLineError):
    """Raised when the apex inset would put the car off the surface."""


class RaceLineParams(BaseModel):
    """Out-in-out shape per corner, offsets relative to the centerline."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    apex_inset: float = Field(default=5.0, ge=0)
    entry_fraction: float = Field(default=0.25, ge=0, le=0.5)
    exit_fraction: float = Field(default=0.25, ge=0, le=0.5)
    spacing: float = Field(default=2.0, gt=0)
    decel: float = Field(default=12.0, gt=0)


@dataclass(frozen=True)
class RaceLine:
    """Closed sequence of (s, x, y, v) samples; ``s`` is the line's own arc length."""

    s: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    closed: bool = True

    def __len__(self) -> int:
        return len(self.s)

    @property
    def length(self) -> float:
        """Arc length including the closing gap back to the first sample."""
        gap = math.hypot(self.x[0] - self.x[-1], self.y[0] - self.y[-1])
        return float(self.s[-1] + gap)


def _check_samples(s: np.ndarray, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> bool:
    """Validate sample arrays and return the closed flag."""
    if len(s) < 3:
        raise RaceLineError(f"Race line needs at least 3 samples, got {len(s)}")
    if not all(np.all(np.isfinite(a)) for a in (s, x, y, v)):
        raise RaceLineError("Race line contains non-finite values")
    if np.any(np.diff(s) <= 0):
        bad = int(np.argmax(np.diff(s) <= 0)) + 1
        raise RaceLineError(f"Arc length is not strictly increasing at sample {bad}")
    if np.any(v <= 0):
        bad = int(np.argmax(v <= 0))
        raise RaceLineError(f"Non-positive speed {v[bad]} at sample {bad}")
    gap = math.hypot(x[0] - x[-1], y[0] - y[-1])
    return bool(gap < 2.0 * float(np.median(np.diff(s))))


def make_raceline(s, x, y, v) -> RaceLine:
    """Build a validated race line from sample arrays."""
    arrays = [np.asarray(a, dtype=float) for a in (s, x, y, v)]
    closed = _check_samples(*arrays)
    return RaceLine(*arrays, closed=closed)


def check_on_track(raceline: RaceLine, track: TrackModel, half_width: float) -> None:
    """Raise if any sample is outside the surface inset by ``half_width``."""
    _, offset, _ = track.project(raceline.x, raceline.y)
    low, high = half_width - 1e-6, track.width - half_width + 1e-6
    off = (offset < low) | (offset > high)
    if np.any(off):
        bad = int(np.argmax(off))
        raise RaceLineError(
            f"Sample {bad} at offset {offset[bad]:.3f} m is outside "
            f"[{half_width:.2f}, {track.width - half_width:.2f}]"
        )


def _corners(track: TrackModel) -> list[tuple[float, float, float]]:
    """(start station, end station, turn sign) for each run of consecutive arcs."""
    segs = track.segments
    n = len(segs)
    arcs = [seg.kind == SegmentKind.ARC for seg in segs]
    if all(arcs):
        return []
    # Rotate so iteration starts on a straight and no corner straddles index 0.
    first = arcs.index(False)
    corners = []
    i = 0
    while i < n:
        j = (first + i) % n
        if not arcs[j]:
            i += 1
            continue
        sign = math.copysign(1.0, segs[j].curvature)
        start = track.seg_start_s[j]
        length = 0.0
        while i < n and arcs[(first + i) % n] and math.copysign(
            1.0, segs[(first + i) % n].curvature
        ) == sign:
            length += segs[(first + i) % n].arc_length
            i += 1
        corners.append((float(start), float(start + length), sign))
    return corners


def offset_profile(track: TrackModel, params: RaceLineParams, half_width: float):
    """Periodic PCHIP of lateral offset against station, knots at turn-in/apex/track-out.

    Raises:
        InfeasibleInsetError: If the inset exceeds half the width minus ``half_width``.
    """
    w = track.width
    limit = 0.5 * w - half_width
    if params.apex_inset > limit + 1e-12:
        raise InfeasibleInsetError(
            f"Apex inset {params.apex_inset} m exceeds usable half-width {limit:.2f} m"
        )
    center = 0.5 * w
    corners = _corners(track)
    length = track.total_length
    if not corners or params.apex_inset == 0:
        return lambda stations: np.full(np.shape(stations), center)

    knots: list[tuple[float, float]] = []
    for idx, (s0, s1, sign) in enumerate(corners):
        prev_end = corners[idx - 1][1]
        next_start = corners[(idx + 1) % len(corners)][0]
        straight_before = (s0 - prev_end) % length
        straight_after = (next_start - s1) % length
        outside = center + sign * params.apex_inset
        inside = center - sign * params.apex_inset
        knots.append((s0 - params.entry_fraction * straight_before, outside))
        knots.append((0.5 * (s0 + s1), inside))
        knots.append((s1 + params.exit_fraction * straight_after, outside))

    st = np.mod(np.array([k[0] for k in knots]), length)
    off = np.array([k[1] for k in knots])
    order = np.argsort(st)
    st, off = st[order], off[order]
    keep = np.concatenate([[True], np.diff(st) > 1e-6])
    st, off = st[keep], off[keep]
    # One period either side keeps the interpolant periodic across the line.
    ext_s = np.concatenate([st - length, st, st + length])
    ext_y = np.concatenate([off, off, off])
    spline = PchipInterpolator(ext_s, ext_y)
    return lambda stations: spline(np.mod(stations, length))


def _periodic_curvature(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xe = np.concatenate([x[-2:], x, x[:2]])
    ye = np.concatenate([y[-2:], y, y[:2]])
    dx = 0.5 * (xe[2:] - xe[:-2])
    dy = 0.5 * (ye[2:] - ye[:-2])
    ddx = xe[2:] - 2.0 * xe[1:-1] + xe[:-2]
    ddy = ye[2:] - 2.0 * ye[1:-1] + ye[:-2]
    kappa = (dx * ddy - dy * ddx) / np.power(dx**2 + dy**2, 1.5)
    return kappa[1:-1]


def generate_raceline(
    track: TrackModel,
    vehicle: VehicleParams | None = None,
    params: RaceLineParams | None = None,
) -> RaceLine:
    """Generate an out-in-out race line and its attainable speed profile.

    Speeds are min(v_top, lateral limit) of the line's curvature, lowered by a
    periodic backward pass so every drop is reachable at ``params.decel``.
    """
    vehicle = vehicle or VehicleParams()
    params = params or RaceLineParams()
    profile = offset_profile(track, params, 0.5 * vehicle.width)

    n = max(int(math.ceil(track.total_length / params.spacing)), 8)
    stations = np.arange(n) * (track.total_length / n)
    px, py, _ = track.points_at(stations, profile(stations))
    ds = np.hypot(np.diff(px), np.diff(py))
    s = np.concatenate([[0.0], np.cumsum(ds)])
    closing = math.hypot(px[0] - px[-1], py[0] - py[-1])

    kappa = _periodic_curvature(px, py)
    v = np.asarray(vehicle.speed_limit(kappa), dtype=float)
    # Two laps of the backward pass settle the wrap-around.
    steps = np.concatenate([ds, [closing]])
    for _ in range(2):
        for i in range(n - 1, -1, -1):
            nxt = v[(i + 1) % n]
            v[i] = min(v[i], math.sqrt(nxt**2 + 2.0 * params.decel * steps[i]))

    logger.info(
        "Generated race line: %d samples, %.1f m, v in [%.2f, %.2f] m/s",
        n, s[-1] + closing, v.min(), v.max(),
    )
    return make_raceline(s, px, py, v)


def save_raceline(raceline: RaceLine, path: Path) -> None:
    """Write ``s,x,y,v`` CSV with round-trip precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([raceline.s, raceline.x, raceline.y, raceline.v])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=CSV_HEADER, comments="")


def load_raceline(
    path: Path, track: TrackModel | None = None, half_width: float = 1.0
) -> RaceLine:
    """Read a race line CSV, optionally checking it stays on ``track``.

    Raises:
        FileNotFoundError: If the file does not exist.
        RaceLineError: On a bad header, malformed row or invalid samples.
    """
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise RaceLineError(f"{path}: expected header '{CSV_HEADER}', got '{header}'")
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise RaceLineError(f"{path}: malformed row: {exc}") from exc
    if data.shape[1] != 4:
        raise RaceLineError(f"{path}: expected 4 columns, got {data.shape[1]}")
    raceline = make_raceline(data[:, 0], data[:, 1], data[:, 2], data[:, 3])
    if track is not None:
        check_on_track(raceline, track, half_width)
    return raceline


class RaceLineReference:
    """Race line expressed against the track: offset, slope and speed by station."""

    def __init__(self, track: TrackModel, raceline: RaceLine):
        self.track = track
        self.raceline = raceline
        station, offset, _ = track.project(raceline.x, raceline.y)
        order = np.argsort(station)
        self._station = station[order]
        self._offset = offset[order]
        self._speed = raceline.v[order]
        length = track.total_length
        self._ext_s = np.concatenate(
            [self._station[-1:] - length, self._station, self._station[:1] + length]
        )
        self._ext_y = np.concatenate([self._offset[-1:], self._offset, self._offset[:1]])
        self._ext_v = np.concatenate([self._speed[-1:], self._speed, self._speed[:1]])

    def _wrapped(self, stations) -> np.ndarray:
        return np.mod(np.asarray(stations, dtype=float), self.track.total_length)

    def offset_at(self, stations) -> np.ndarray:
        return np.interp(self._wrapped(stations), self._ext_s, self._ext_y)

    def speed_at(self, stations) -> np.ndarray:
        return np.interp(self._wrapped(stations), self._ext_s, self._ext_v)

    def slope_at(self, stations, ds: float = 1.0) -> np.ndarray:
        """dy/ds of the offset profile by central difference."""
        stations = np.asarray(stations, dtype=float)
        return (self.offset_at(stations + ds) - self.offset_at(stations - ds)) / (2.0 * ds)
