"""Race metrics from logs: lap times, first-to-last gap, overtakes and safety counts."""

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from .simulation import TICK_COLUMNS, RaceEvent, RaceLog

logger = logging.getLogger(__name__)

SAFETY_EVENTS = ("collision", "bound_overlap", "boundary", "lat_sat")


class MetricsError(ValueError):
    """Raised for missing or malformed race logs."""


@dataclass(frozen=True)
class Overtake:
    t: float
    passer: int
    passed: int


def load_race_log(log_dir: Path) -> RaceLog:
    """Read ``ticks.csv``, ``events.jsonl`` and the track length from ``manifest.json``.

    Raises:
        MetricsError: Missing files or a malformed row, named by line number.
    """
    log_dir = Path(log_dir)
    ticks_path = log_dir / "ticks.csv"
    events_path = log_dir / "events.jsonl"
    manifest_path = log_dir / "manifest.json"
    for path in (ticks_path, events_path, manifest_path):
        if not path.exists():
            raise MetricsError(f"Missing log file: {path}")

    try:
        track_length = float(json.loads(manifest_path.read_text())["track_length"])
    except (KeyError, ValueError, TypeError) as exc:
        raise MetricsError(f"{manifest_path}: no usable track_length ({exc})") from exc
    log = RaceLog(track_length)

    with open(ticks_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != TICK_COLUMNS:
            raise MetricsError(f"{ticks_path}: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(TICK_COLUMNS):
                raise MetricsError(f"{ticks_path}:{lineno}: expected {len(TICK_COLUMNS)} fields")
            try:
                values = [int(v) if col in ("vehicle_id", "lap") else float(v)
                          for col, v in zip(TICK_COLUMNS, row, strict=True)]
            except ValueError as exc:
                raise MetricsError(f"{ticks_path}:{lineno}: {exc}") from exc
            log.ticks.append(tuple(values))

    with open(events_path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                log.events.append(RaceEvent.model_validate_json(line))
            except ValidationError as exc:
                raise MetricsError(f"{events_path}:{lineno}: invalid event ({exc})") from exc
    return log


def lap_times(log: RaceLog) -> dict[int, list[float]]:
    """Completed lap times per vehicle from lap events.

    An event carries its lap time directly, or its lap start time; bare
    line-crossing events are differenced against the previous crossing.
    """
    out: dict[int, list[float]] = {}
    previous: dict[int, float] = {}
    for event in log.events_of("lap"):
        vid = event.vehicles[0]
        out.setdefault(vid, [])
        if "lap_time" in event.data:
            out[vid].append(float(event.data["lap_time"]))
        elif "start_time" in event.data:
            out[vid].append(event.t - float(event.data["start_time"]))
        elif vid in previous:
            out[vid].append(event.t - previous[vid])
        previous[vid] = event.t
    return out


def progress_table(log: RaceLog) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(times, vehicle ids, progress matrix) with progress = lap * L + s."""
    if not log.ticks:
        return np.empty(0), np.empty(0, dtype=int), np.empty((0, 0))
    rows = np.array([(r[0], r[1], r[7], r[8]) for r in log.ticks], dtype=float)
    times, t_idx = np.unique(rows[:, 0], return_inverse=True)
    vids, v_idx = np.unique(rows[:, 1].astype(int), return_inverse=True)
    table = np.full((len(times), len(vids)), np.nan)
    table[t_idx, v_idx] = rows[:, 3] * log.track_length + rows[:, 2]
    return times, vids, table


def gap_first_to_last(log: RaceLog) -> tuple[np.ndarray, np.ndarray]:
    """Spread between the leading and trailing vehicle at each logged time."""
    times, _, table = progress_table(log)
    if table.size == 0:
        return times, np.empty(0)
    return times, np.nanmax(table, axis=1) - np.nanmin(table, axis=1)


def overtakes(log: RaceLog, persistence: float = 2.0) -> list[Overtake]:
    """Position swaps whose new order holds for at least ``persistence`` seconds."""
    times, vids, table = progress_table(log)
    found: list[Overtake] = []
    n = len(vids)
    for i in range(n):
        for j in range(i + 1, n):
            diff = table[:, i] - table[:, j]
            sign = np.sign(diff)
            settled = sign[0] if len(sign) else 0.0
            for k in range(1, len(sign)):
                if sign[k] == 0 or sign[k] == settled or np.isnan(sign[k]):
                    continue
                window = (times >= times[k]) & (times <= times[k] + persistence)
                if times[-1] - times[k] < persistence:
                    break
                if np.all(sign[window] == sign[k]):
                    passer, passed = (vids[i], vids[j]) if sign[k] > 0 else (vids[j], vids[i])
                    if settled != 0:
                        found.append(Overtake(float(times[k]), int(passer), int(passed)))
                    settled = sign[k]
    return sorted(found, key=lambda o: (o.t, o.passer, o.passed))


def safety_report(log: RaceLog) -> dict[str, int]:
    counts = Counter(e.type for e in log.events)
    return {kind: counts.get(kind, 0) for kind in SAFETY_EVENTS}


def histogram(values: np.ndarray, bins: int) -> list[tuple[float, float, int]]:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return []
    counts, edges = np.histogram(values, bins=bins)
    return [(float(edges[k]), float(edges[k + 1]), int(c)) for k, c in enumerate(counts)]


def summarize(log: RaceLog, persistence: float = 2.0) -> dict[str, Any]:
    """Metrics summary as JSON-ready data."""
    laps = lap_times(log)
    per_vehicle = {
        str(vid): {
            "laps": len(times),
            "min": min(times),
            "max": max(times),
            "mean": float(np.mean(times)),
        }
        for vid, times in sorted(laps.items())
        if times
    }
    all_times = [t for times in laps.values() for t in times]
    spread = (
        100.0 * (max(all_times) - min(all_times)) / min(all_times) if all_times else 0.0
    )
    times, gaps = gap_first_to_last(log)

    final_gap = None
    lap_events = log.events_of("lap")
    if lap_events and gaps.size:
        leader_laps = max(e.data.get("lap", 0) for e in lap_events)
        cutoff_lap = leader_laps - 5
        starts = [e.t for e in lap_events if e.data.get("lap") == cutoff_lap]
        since = min(starts) if starts and cutoff_lap >= 1 else times[0]
        final = gaps[times >= since]
        final_gap = float(np.mean(final)) if final.size else None

    return {
        "finish_time": log.finish_time,
        "lap_times": per_vehicle,
        "lap_time_spread_pct": spread,
        "mean_gap_m": float(np.mean(gaps)) if gaps.size else 0.0,
        "mean_gap_final_5_laps_m": final_gap,
        "overtakes": len(overtakes(log, persistence)),
        "safety": safety_report(log),
    }


def _write_rows(path: Path, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_metrics(
    log: RaceLog, out_dir: Path, bins: int = 20, persistence: float = 2.0
) -> dict[str, Any]:
    """Write the summary JSON and the per-figure CSVs; returns the summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = summarize(log, persistence)
    (out_dir / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n")

    all_times = [t for times in lap_times(log).values() for t in times]
    times, gaps = gap_first_to_last(log)
    bin_header = ["bin_start", "bin_end", "count"]
    _write_rows(out_dir / "lap_time_histogram.csv", bin_header, histogram(all_times, bins))
    _write_rows(out_dir / "gap_distribution.csv", bin_header, histogram(gaps, bins))
    _write_rows(
        out_dir / "gap_vs_time.csv",
        ["t", "gap_m"],
        [(f"{t:.6f}", f"{g:.6f}") for t, g in zip(times, gaps, strict=True)],
    )
    logger.info("Wrote metrics to %s", out_dir)
    return summary
