"""Deterministic fixed-step multi-vehicle race simulation.

Physics runs at 100 Hz. Every fourth tick all vehicles are observed at the
same instant, each controller plans on its own snapshot, and the resulting
commands are held for the next four ticks.
"""

import csv
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .collision import SafetyParams, separation
from .control import Commands, ControlGains, VehicleController, VehicleObservation
from .planner import ManeuverPlanner, PlannerParams
from .prediction import PredictionParams
from .raceline import RaceLine, RaceLineReference
from .track import TrackModel
from .vehicle import VehicleParams

logger = logging.getLogger(__name__)

TICK_COLUMNS = [
    "t", "vehicle_id", "x", "y", "heading", "v", "omega", "s", "lap", "u", "steer", "slip_factor",
]


class SimParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    physics_dt: float = Field(default=0.01, gt=0)
    control_every: int = Field(default=4, ge=1)
    grid_spacing: float = Field(default=20.0, gt=0)
    # None starts each car at the race-line speed of its grid slot.
    start_speed: float | None = Field(default=None, gt=0)
    slipstream: bool = True
    slip_delta: float = Field(default=0.25, ge=0, lt=1)
    slip_range: float = Field(default=30.0, gt=0)
    slip_lateral: float = Field(default=2.0, gt=0)
    sensor_range: float = Field(default=200.0, gt=0)
    lap_time_limit: float = Field(default=120.0, gt=0)

    @property
    def control_dt(self) -> float:
        return self.physics_dt * self.control_every


@dataclass(frozen=True)
class VehicleState:
    vehicle_id: int
    x: float
    y: float
    heading: float
    v: float
    omega: float = 0.0
    station: float = 0.0
    offset: float = 0.0
    lap: int = 0

    def progress(self, track_length: float) -> float:
        return self.lap * track_length + self.station

    def observation(self) -> VehicleObservation:
        return VehicleObservation(self.vehicle_id, self.x, self.y, self.heading, self.v, self.omega)


@dataclass
class WorldState:
    sim_time: float
    vehicles: list[VehicleState]
    seed: int = 0


@dataclass(frozen=True)
class SensorSnapshot:
    ego: VehicleObservation
    opponents: list[VehicleObservation]


class RaceEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    t: float
    type: str
    vehicles: list[int]
    data: dict[str, Any] = Field(default_factory=dict)


@dataclass
class RaceLog:
    """Tick rows at the control rate plus discrete events."""

    track_length: float
    ticks: list[tuple] = field(default_factory=list)
    events: list[RaceEvent] = field(default_factory=list)
    finish_time: float = 0.0

    def events_of(self, kind: str) -> list[RaceEvent]:
        return [e for e in self.events if e.type == kind]

    def lap_times(self) -> dict[int, list[float]]:
        out: dict[int, list[float]] = {}
        for e in self.events_of("lap"):
            out.setdefault(e.vehicles[0], []).append(e.data["lap_time"])
        return out

    def write_ticks(self, path: Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(TICK_COLUMNS)
            for row in self.ticks:
                writer.writerow(
                    [v if isinstance(v, int) else f"{v:.6f}" for v in row]
                )

    def write_events(self, path: Path) -> None:
        with open(path, "w", newline="\n") as f:
            for event in self.events:
                f.write(event.model_dump_json() + "\n")


def step_vehicle(
    state: VehicleState,
    cmd: Commands,
    params: VehicleParams,
    slip_factor: float = 1.0,
    dt: float = 0.01,
) -> tuple[VehicleState, bool]:
    """Advance one vehicle by ``dt``; also reports whether yaw rate hit the grip limit.

    Steering commands yaw acceleration. Longitudinal force combines throttle
    (power and traction limited), brake, drag scaled by the slipstream factor
    and tire-slip cornering drag.
    """
    v = state.v
    u = cmd.throttle_brake
    force = (
        max(u, 0.0) * float(params.drive_force(v))
        - max(-u, 0.0) * params.brake_force
        - slip_factor * params.drag * v * v
        - params.cornering_drag * params.mass * abs(v * state.omega)
    )
    v_new = max(v + force / params.mass * dt, 0.0)

    omega = state.omega + cmd.steering * params.yaw_accel_max * dt
    saturated = False
    if v_new > 1e-6:
        omega_cap = float(params.a_lat_max(v_new)) / v_new
        if abs(omega) > omega_cap:
            omega = math.copysign(omega_cap, omega)
            saturated = True
    heading = state.heading + omega * dt
    return (
        replace(
            state,
            x=state.x + v_new * math.cos(heading) * dt,
            y=state.y + v_new * math.sin(heading) * dt,
            heading=heading,
            v=v_new,
            omega=omega,
        ),
        saturated,
    )


def slipstream_factor(
    gaps: np.ndarray, lateral: np.ndarray, params: SimParams
) -> float:
    """Drag multiplier from leaders at along-track ``gaps`` and lateral offsets.

    Each leader contributes a kernel falling linearly from 1 (dead ahead,
    touching) to 0 at ``slip_range`` metres ahead or ``slip_lateral`` metres
    aside; the strongest one sets the reduction.
    """
    gaps = np.asarray(gaps, dtype=float)
    lateral = np.abs(np.asarray(lateral, dtype=float))
    if gaps.size == 0:
        return 1.0
    kernel = np.clip(1.0 - gaps / params.slip_range, 0.0, 1.0) * np.clip(
        1.0 - lateral / params.slip_lateral, 0.0, 1.0
    )
    kernel = np.where(gaps >= 0.0, kernel, 0.0)
    return float(1.0 - params.slip_delta * np.max(kernel))


class RaceSimulator:
    """Runs one race. Controllers see only their own snapshot each cycle."""

    def __init__(
        self,
        track: TrackModel,
        raceline: RaceLine,
        n_vehicles: int,
        laps: int,
        seed: int = 0,
        vehicle: VehicleParams | None = None,
        planner: PlannerParams | None = None,
        prediction: PredictionParams | None = None,
        safety: SafetyParams | None = None,
        control: ControlGains | None = None,
        sim: SimParams | None = None,
        tick_log: bool = True,
        debug_sink: Callable[[dict[str, Any]], None] | None = None,
    ):
        if n_vehicles < 1:
            raise ValueError(f"Need at least one vehicle, got {n_vehicles}")
        if laps < 1:
            raise ValueError(f"Need at least one lap, got {laps}")
        self.track = track
        self.n_vehicles = n_vehicles
        self.laps = laps
        self.seed = seed
        self.vehicle = vehicle or VehicleParams()
        self.sim = sim or SimParams()
        self.tick_log = tick_log
        self.debug_sink = debug_sink
        self.reference = RaceLineReference(track, raceline)
        safety = safety or SafetyParams()
        planner_params = (planner or PlannerParams()).model_copy(
            update={"dt": self.sim.control_dt}
        )

        self.controllers = [
            VehicleController(
                i,
                ManeuverPlanner(track, self.reference, self.vehicle, planner_params,
                                prediction, safety),
                control,
                period=self.sim.control_dt,
            )
            for i in range(n_vehicles)
        ]
        self.bound = self.controllers[0].planner.bound
        self.body = self.bound.body()
        self.world = self._starting_grid()
        self.log = RaceLog(track.total_length)

        self._lap_start = [0.0 if v.lap == 0 else math.nan for v in self.world.vehicles]
        self._in_contact: set[tuple[int, int]] = set()
        self._in_bound: set[tuple[int, int]] = set()
        self._off_track: set[int] = set()
        self._saturated: set[int] = set()

    def _starting_grid(self) -> WorldState:
        """Staggered flying start on the race line; the seed shuffles grid slots.

        Cars start at race speed unless ``start_speed`` is set, so the grid
        spacing is also the racing gap and the field begins inside the draft.
        """
        rng = np.random.default_rng(self.seed)
        slots = rng.permutation(self.n_vehicles) if self.n_vehicles > 1 else np.zeros(1, int)
        length = self.track.total_length
        vehicles = []
        for vid in range(self.n_vehicles):
            slot = int(slots[vid])
            station = (-slot * self.sim.grid_spacing) % length
            offset = float(self.reference.offset_at(station))
            x, y, heading = self.track.points_at(station, offset)
            vehicles.append(
                VehicleState(
                    vehicle_id=vid,
                    x=float(x),
                    y=float(y),
                    heading=float(heading),
                    v=self._grid_speed(station),
                    station=station,
                    offset=offset,
                    lap=0 if slot == 0 else -1,
                )
            )
        return WorldState(0.0, vehicles, self.seed)

    def _grid_speed(self, station: float) -> float:
        if self.sim.start_speed is not None:
            return self.sim.start_speed
        return float(self.reference.speed_at(station))

    def snapshot(self, vid: int) -> SensorSnapshot:
        """What vehicle ``vid`` sees: itself plus opponents within sensor range."""
        ego = self.world.vehicles[vid]
        opponents = [
            other.observation()
            for other in self.world.vehicles
            if other.vehicle_id != vid
            and abs(self.track.wrap(other.station - ego.station)) <= self.sim.sensor_range
        ]
        return SensorSnapshot(ego.observation(), opponents)

    def _slip_factors(self) -> list[float]:
        vehicles = self.world.vehicles
        if not self.sim.slipstream or len(vehicles) < 2:
            return [1.0] * len(vehicles)
        stations = np.array([v.station for v in vehicles])
        offsets = np.array([v.offset for v in vehicles])
        factors = []
        for i, ego in enumerate(vehicles):
            others = np.arange(len(vehicles)) != i
            gaps = self.track.wrap(stations[others] - ego.station)
            factors.append(slipstream_factor(gaps, offsets[others] - ego.offset, self.sim))
        return factors

    def _emit(self, t: float, kind: str, vehicles: list[int], **data: Any) -> None:
        self.log.events.append(RaceEvent(t=round(t, 6), type=kind, vehicles=vehicles, data=data))

    def _control_cycle(self, slip: list[float]) -> list[Commands]:
        snapshots = [self.snapshot(i) for i in range(self.n_vehicles)]
        commands = []
        for ctrl, snap in zip(self.controllers, snapshots, strict=True):
            out = ctrl.control(snap.ego, snap.opponents, drag_factor=slip[ctrl.vehicle_id])
            commands.append(out.commands)
            if self.debug_sink is not None:
                self.debug_sink(
                    {"t": round(self.world.sim_time, 6), "vehicle_id": ctrl.vehicle_id,
                     **out.plan.to_record()}
                )
        if self.tick_log:
            for state, cmd, factor in zip(self.world.vehicles, commands, slip, strict=True):
                self.log.ticks.append(
                    (self.world.sim_time, state.vehicle_id, state.x, state.y, state.heading,
                     state.v, state.omega, state.station, state.lap,
                     cmd.throttle_brake, cmd.steering, factor)
                )
        return commands

    def _update_station(self, before: VehicleState, after: VehicleState, t0: float) -> VehicleState:
        station, offset, _ = self.track.project(after.x, after.y)
        s_new = float(station[0])
        after = replace(after, station=s_new, offset=float(offset[0]))
        length = self.track.total_length
        if s_new >= before.station - 0.5 * length:
            return after

        # Crossed the start/finish line during this tick.
        dt = self.sim.physics_dt
        frac = (length - before.station) / (s_new + length - before.station)
        t_cross = t0 + frac * dt
        lap = before.lap + 1
        vid = after.vehicle_id
        if lap >= 1:
            start = self._lap_start[vid]
            self._emit(
                t_cross, "lap", [vid],
                lap=lap, lap_time=round(t_cross - start, 6), start_time=round(start, 6),
            )
        self._lap_start[vid] = t_cross
        return replace(after, lap=lap)

    def _check_contacts(self, t: float) -> None:
        vehicles = self.world.vehicles
        n = len(vehicles)
        if n < 2:
            return
        ii, jj = np.triu_indices(n, 1)
        xs = np.array([v.x for v in vehicles])
        ys = np.array([v.y for v in vehicles])
        hs = np.array([v.heading for v in vehicles])
        body_gap = separation(xs[ii], ys[ii], hs[ii], self.body, xs[jj], ys[jj], hs[jj], self.body)
        bound_gap = separation(
            xs[ii], ys[ii], hs[ii], self.bound, xs[jj], ys[jj], hs[jj], self.bound
        )
        for k, (i, j) in enumerate(zip(ii.tolist(), jj.tolist(), strict=True)):
            pair = (i, j)
            if body_gap[k] <= 0.0:
                if pair not in self._in_contact:
                    self._emit(t, "collision", [i, j], speed_i=vehicles[i].v, speed_j=vehicles[j].v)
                    logger.warning("Collision between vehicles %d and %d at t=%.2f", i, j, t)
                self._in_contact.add(pair)
            else:
                self._in_contact.discard(pair)
            if bound_gap[k] <= 0.0 and body_gap[k] > 0.0:
                if pair not in self._in_bound:
                    self._emit(t, "bound_overlap", [i, j], gap=round(float(body_gap[k]), 6))
                self._in_bound.add(pair)
            else:
                self._in_bound.discard(pair)

    def _check_vehicle(self, state: VehicleState, saturated: bool, t: float) -> None:
        vid = state.vehicle_id
        off = state.offset < 0.0 or state.offset > self.track.width
        if off and vid not in self._off_track:
            self._emit(t, "boundary", [vid], offset=round(state.offset, 6))
            self._off_track.add(vid)
        elif not off:
            self._off_track.discard(vid)
        if saturated and vid not in self._saturated:
            self._emit(t, "lat_sat", [vid], v=round(state.v, 6), omega=round(state.omega, 6))
            logger.debug("Vehicle %d saturated lateral grip at t=%.2f", vid, t)
            self._saturated.add(vid)
        elif not saturated:
            self._saturated.discard(vid)

    def _check_overtakes(self, before: list[float], t: float) -> None:
        length = self.track.total_length
        after = [v.progress(length) for v in self.world.vehicles]
        n = len(after)
        for i in range(n):
            for j in range(i + 1, n):
                was, now = before[i] - before[j], after[i] - after[j]
                if was * now < 0:
                    passer, passed = (i, j) if now > 0 else (j, i)
                    self._emit(t, "overtake", [passer, passed])

    def leader_laps(self) -> int:
        return max(v.lap for v in self.world.vehicles)

    def run(self) -> RaceLog:
        logger.info(
            "Race start: %d vehicles, %d laps, seed %d, slipstream %s",
            self.n_vehicles, self.laps, self.seed, self.sim.slipstream,
        )
        dt = self.sim.physics_dt
        max_ticks = int(math.ceil((self.laps + 1) * self.sim.lap_time_limit / dt))
        length = self.track.total_length
        commands: list[Commands] = []
        slip = [1.0] * self.n_vehicles

        for tick in range(max_ticks):
            if self.leader_laps() >= self.laps:
                break
            t0 = self.world.sim_time
            if tick % self.sim.control_every == 0:
                slip = self._slip_factors()
                commands = self._control_cycle(slip)

            progress_before = [v.progress(length) for v in self.world.vehicles]
            updated = []
            for state, cmd, factor in zip(self.world.vehicles, commands, slip, strict=True):
                moved, saturated = step_vehicle(state, cmd, self.vehicle, factor, dt)
                moved = self._update_station(state, moved, t0)
                self._check_vehicle(moved, saturated, t0 + dt)
                updated.append(moved)
            # Integer tick count keeps time free of accumulated rounding.
            self.world = WorldState((tick + 1) * dt, updated, self.seed)
            self._check_contacts(self.world.sim_time)
            self._check_overtakes(progress_before, self.world.sim_time)
        else:
            logger.warning("Race stopped at the %.0f s time limit", self.world.sim_time)

        self.log.finish_time = self.world.sim_time
        logger.info("Race finished at t=%.2f s", self.world.sim_time)
        return self.log


def run_race(
    track: TrackModel,
    raceline: RaceLine,
    n_vehicles: int,
    laps: int,
    seed: int = 0,
    **kwargs: Any,
) -> RaceLog:
    """Build a simulator and run it to completion."""
    return RaceSimulator(track, raceline, n_vehicles, laps, seed, **kwargs).run()


def write_race_log(log: RaceLog, out_dir: Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"ticks": out_dir / "ticks.csv", "events": out_dir / "events.jsonl"}
    log.write_ticks(paths["ticks"])
    log.write_events(paths["events"])
    return paths
