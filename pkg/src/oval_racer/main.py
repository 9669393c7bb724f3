"""CLI entry point for Oval Racer."""

import json
import logging
import math
from pathlib import Path
from typing import Annotated, Any

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from typer.core import TyperGroup

from . import __version__
from .config import ConfigError, ConfigManager
from .metrics import MetricsError, load_race_log, write_metrics
from .output_formatter import JSONEncoder, OutputFormatter
from .raceline import RaceLine, RaceLineError, generate_raceline, load_raceline, save_raceline
from .simulation import RaceSimulator, write_race_log
from .track import TrackConfigError, TrackModel, load_track

USAGE_ERRORS = (ConfigError, TrackConfigError, RaceLineError, MetricsError, FileNotFoundError)


class FlexibleGlobalOptionGroup(TyperGroup):
    """Allow selected global options to appear after subcommands."""

    FLAGS = ("--json", "--verbose", "-v")
    VALUED = ("--config", "--set")

    def parse_args(self, ctx: typer.Context, args: list[str]) -> list[str]:
        return super().parse_args(ctx, self._normalize_selected_globals(args))

    @classmethod
    def _normalize_selected_globals(cls, args: list[str]) -> list[str]:
        global_args: list[str] = []
        passthrough_args: list[str] = []

        i = 0
        while i < len(args):
            token = args[i]

            if token == "--":
                passthrough_args.extend(args[i:])
                break

            if token in cls.FLAGS:
                global_args.append(token)
                i += 1
                continue

            if token in cls.VALUED:
                if i + 1 >= len(args):
                    passthrough_args.append(token)
                    i += 1
                    continue
                global_args.extend([token, args[i + 1]])
                i += 2
                continue

            if any(token.startswith(f"{opt}=") for opt in cls.VALUED):
                global_args.append(token)
                i += 1
                continue

            passthrough_args.append(token)
            i += 1

        return global_args + passthrough_args


app = typer.Typer(
    name="ovalrace",
    cls=FlexibleGlobalOptionGroup,
    help="Oval racing planner and multi-vehicle race simulator",
    no_args_is_help=True,
)

# Global state for formatter and config (set by callback)
formatter: OutputFormatter = OutputFormatter()
config: ConfigManager | None = None


def get_config() -> ConfigManager:
    """Get or create ConfigManager instance."""
    global config
    if config is None:
        config = ConfigManager()
    return config


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def _fail(exc: Exception) -> None:
    """Report an exception and exit with 2 for input problems, 1 otherwise."""
    if isinstance(exc, USAGE_ERRORS):
        formatter.error(str(exc), error_code=type(exc).__name__)
        raise typer.Exit(code=2)
    formatter.error(str(exc), error_code=type(exc).__name__)
    raise typer.Exit(code=1)


@app.callback()
def main(
    json_output: Annotated[
        bool, typer.Option("--json", help="Output as JSON for programmatic use")
    ] = False,
    config_path: Annotated[
        Path | None, typer.Option("--config", help="TOML config file")
    ] = None,
    overrides: Annotated[
        list[str] | None,
        typer.Option("--set", help="Override a config value: section.key=value"),
    ] = None,
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging")] = False,
) -> None:
    """Oval Racer CLI - plan, race and measure on an oval."""
    global formatter, config

    formatter = OutputFormatter(json_mode=json_output)
    _configure_logging(verbose)
    try:
        config = ConfigManager(config_path, overrides)
    except ConfigError as e:
        formatter.error(str(e), error_code="ConfigError")
        raise typer.Exit(code=2)


def _load_inputs(
    track_path: Path | None, raceline_path: Path | None
) -> tuple[TrackModel, RaceLine]:
    cfg = get_config()
    if track_path is not None and not track_path.exists():
        raise FileNotFoundError(f"Track file not found: {track_path}")
    track = load_track(track_path)
    if raceline_path is None:
        return track, generate_raceline(track, cfg.vehicle, cfg.raceline)
    if not raceline_path.exists():
        raise FileNotFoundError(f"Race line file not found: {raceline_path}")
    return track, load_raceline(raceline_path, track, 0.5 * cfg.vehicle.width)


def _manifest(
    track: TrackModel, vehicles: int, laps: int, seed: int, slipstream: bool
) -> dict[str, Any]:
    return {
        "version": __version__,
        "seed": seed,
        "vehicles": vehicles,
        "laps": laps,
        "slipstream": slipstream,
        "track_length": track.total_length,
        "track": {
            "width": track.width,
            "segments": [
                {"kind": s.kind.value, "length": s.length, "radius": s.radius,
                 "sweep_deg": math.degrees(s.sweep)}
                for s in track.segments
            ],
        },
        "config": get_config().effective(),
    }


def _run(
    vehicles: int,
    laps: int,
    seed: int,
    slipstream: bool,
    out_dir: Path,
    track_path: Path | None,
    raceline_path: Path | None,
    debug_planner: bool,
) -> dict[str, Any]:
    cfg = get_config()
    track, raceline = _load_inputs(track_path, raceline_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    sim_params = cfg.sim.model_copy(update={"slipstream": slipstream})

    debug_file = None
    if debug_planner or cfg.output.debug_planner:
        debug_file = open(out_dir / "planner_debug.jsonl", "w")

    def sink(record: dict[str, Any]) -> None:
        debug_file.write(json.dumps(record, cls=JSONEncoder) + "\n")

    try:
        simulator = RaceSimulator(
            track, raceline, vehicles, laps, seed,
            vehicle=cfg.vehicle, planner=cfg.planner, prediction=cfg.prediction,
            safety=cfg.safety, control=cfg.control, sim=sim_params,
            tick_log=cfg.output.tick_log, debug_sink=sink if debug_file else None,
        )
        log = simulator.run()
    finally:
        if debug_file is not None:
            debug_file.close()

    files: dict[str, Any] = write_race_log(log, out_dir)
    manifest = _manifest(track, vehicles, laps, seed, slipstream)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    files["manifest"] = out_dir / "manifest.json"
    summary = write_metrics(
        log, out_dir, cfg.output.histogram_bins, cfg.output.overtake_persistence
    )
    files["metrics"] = out_dir / "metrics.json"
    return {"metrics": summary, "files": {k: str(v) for k, v in files.items()}}


@app.command()
def solo(
    laps: Annotated[int, typer.Option("--laps", "-l", min=1, help="Laps to drive")] = 1,
    out_dir: Annotated[Path, typer.Option("--out-dir", "-o", help="Output directory")] = Path(
        "runs/solo"
    ),
    track: Annotated[Path | None, typer.Option("--track", help="Track geometry file")] = None,
    raceline: Annotated[Path | None, typer.Option("--raceline", help="Race line CSV")] = None,
    debug_planner: Annotated[
        bool, typer.Option("--debug-planner", help="Write planner_debug.jsonl")
    ] = False,
) -> None:
    """Drive a single vehicle around the track."""
    try:
        result = _run(1, laps, 0, get_config().sim.slipstream, out_dir, track, raceline,
                      debug_planner)
        formatter.success(f"Solo run of {laps} lap(s) written to {out_dir}", result)
    except Exception as e:
        _fail(e)


@app.command()
def race(
    vehicles: Annotated[int, typer.Option("--vehicles", "-n", min=2, help="Vehicles")] = 6,
    laps: Annotated[int, typer.Option("--laps", "-l", min=1, help="Race distance")] = 30,
    seed: Annotated[int, typer.Option("--seed", help="Grid order seed")] = 0,
    no_slipstream: Annotated[
        bool, typer.Option("--no-slipstream", help="Disable drafting")
    ] = False,
    out_dir: Annotated[Path, typer.Option("--out-dir", "-o", help="Output directory")] = Path(
        "runs/race"
    ),
    track: Annotated[Path | None, typer.Option("--track", help="Track geometry file")] = None,
    raceline: Annotated[Path | None, typer.Option("--raceline", help="Race line CSV")] = None,
    debug_planner: Annotated[
        bool, typer.Option("--debug-planner", help="Write planner_debug.jsonl")
    ] = False,
) -> None:
    """Race several identical vehicles, each with its own controller."""
    try:
        slipstream = get_config().sim.slipstream and not no_slipstream
        result = _run(vehicles, laps, seed, slipstream, out_dir, track, raceline, debug_planner)
        collisions = result["metrics"]["safety"]["collision"]
        formatter.success(
            f"Race of {vehicles} vehicles over {laps} lap(s) finished, "
            f"{collisions} collision(s)",
            result,
        )
    except Exception as e:
        _fail(e)


@app.command(name="raceline")
def raceline_cmd(
    out: Annotated[Path, typer.Option("--out", "-o", help="Race line CSV to write")] = Path(
        "raceline.csv"
    ),
    track: Annotated[Path | None, typer.Option("--track", help="Track geometry file")] = None,
    apex_inset: Annotated[
        float | None, typer.Option("--apex-inset", help="Apex offset from centerline (m)")
    ] = None,
    entry_fraction: Annotated[
        float | None, typer.Option("--entry-fraction", help="Turn-in share of straight")
    ] = None,
    exit_fraction: Annotated[
        float | None, typer.Option("--exit-fraction", help="Track-out share of straight")
    ] = None,
) -> None:
    """Generate the offline race line."""
    try:
        cfg = get_config()
        updates = {
            key: value
            for key, value in (
                ("apex_inset", apex_inset),
                ("entry_fraction", entry_fraction),
                ("exit_fraction", exit_fraction),
            )
            if value is not None
        }
        params = cfg.raceline.model_validate({**cfg.raceline.model_dump(), **updates})
        if track is not None and not track.exists():
            raise FileNotFoundError(f"Track file not found: {track}")
        model = load_track(track)
        line = generate_raceline(model, cfg.vehicle, params)
        save_raceline(line, out)
        formatter.success(
            f"Race line written to {out}",
            {
                "raceline": {
                    "samples": len(line),
                    "length": line.length,
                    "v_min": float(line.v.min()),
                    "v_max": float(line.v.max()),
                },
                "files": {"raceline": str(out)},
            },
        )
    except ValidationError as e:
        _fail(RaceLineError(f"Invalid race line parameters: {e}"))
    except Exception as e:
        _fail(e)


@app.command()
def metrics(
    log_dir: Annotated[Path, typer.Argument(help="Directory with ticks.csv and events.jsonl")],
    out: Annotated[Path | None, typer.Option("--out", "-o", help="Metrics output dir")] = None,
) -> None:
    """Recompute metrics from an existing run directory."""
    try:
        cfg = get_config()
        log = load_race_log(log_dir)
        target = out or log_dir
        summary = write_metrics(
            log, target, cfg.output.histogram_bins, cfg.output.overtake_persistence
        )
        formatter.success(
            f"Metrics written to {target}",
            {"metrics": summary, "files": {"metrics": str(target / "metrics.json")}},
        )
    except Exception as e:
        _fail(e)


if __name__ == "__main__":
    app()
