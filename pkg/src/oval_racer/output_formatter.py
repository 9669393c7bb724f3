"""Output formatting for CLI and programmatic use."""

import json
from pathlib import Path
from typing import Any

import numpy as np
from rich.console import Console
from rich.table import Table


class JSONEncoder(json.JSONEncoder):
    """Custom JSON encoder for output."""

    def default(self, obj: Any) -> Any:
        if isinstance(obj, Path):
            return str(obj)
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        return super().default(obj)


class OutputFormatter:
    """Formats output for both Rich terminal and JSON modes."""

    def __init__(self, json_mode: bool = False):
        """Initialize formatter.

        Args:
            json_mode: If True, output JSON instead of Rich formatting
        """
        self.json_mode = json_mode
        self.console = Console()

    def output(self, data: dict[str, Any], message: str = "") -> None:
        if self.json_mode:
            print(json.dumps(data, cls=JSONEncoder, indent=2))
        else:
            self._output_rich(data, message)

    def _output_rich(self, data: dict[str, Any], message: str) -> None:
        if message:
            self.console.print(f"[green]✓[/green] {message}")

        payload = data.get("data", {})
        if "metrics" in payload:
            self._render_metrics(payload["metrics"])
        if "raceline" in payload:
            self._render_raceline(payload["raceline"])
        if "files" in payload:
            self._render_files(payload["files"])

    def _render_metrics(self, metrics: dict[str, Any]) -> None:
        """Render lap times, gaps and the safety report."""
        laps = metrics.get("lap_times", {})
        if laps:
            table = Table(title="Lap Times", show_header=True, header_style="bold")
            table.add_column("Vehicle", justify="right")
            table.add_column("Laps", justify="right")
            table.add_column("Best (s)", justify="right")
            table.add_column("Worst (s)", justify="right")
            table.add_column("Mean (s)", justify="right")
            for vid, stats in laps.items():
                table.add_row(
                    vid,
                    str(stats["laps"]),
                    f"{stats['min']:.3f}",
                    f"{stats['max']:.3f}",
                    f"{stats['mean']:.3f}",
                )
            self.console.print(table)
        else:
            self.console.print("[dim]No completed laps[/dim]")

        self.console.print(f"Lap time spread: {metrics.get('lap_time_spread_pct', 0.0):.2f}%")
        if metrics.get("mean_gap_m"):
            self.console.print(f"Mean first-to-last gap: {metrics['mean_gap_m']:.1f} m")
        if metrics.get("mean_gap_final_5_laps_m") is not None:
            self.console.print(
                f"Mean gap, final 5 laps: {metrics['mean_gap_final_5_laps_m']:.1f} m"
            )
        self.console.print(f"Overtakes: {metrics.get('overtakes', 0)}")

        safety = metrics.get("safety", {})
        if safety:
            table = Table(title="Safety Report", show_header=True, header_style="bold")
            table.add_column("Event")
            table.add_column("Count", justify="right")
            for kind, count in safety.items():
                color = "red" if count and kind == "collision" else "white"
                table.add_row(kind, f"[{color}]{count}[/{color}]")
            self.console.print(table)

    def _render_raceline(self, info: dict[str, Any]) -> None:
        self.console.print(
            f"Race line: {info['samples']} samples, {info['length']:.1f} m, "
            f"v {info['v_min']:.2f}-{info['v_max']:.2f} m/s"
        )

    def _render_files(self, files: dict[str, Any]) -> None:
        self.console.print("\n[dim]Files:[/dim]")
        for name, path in files.items():
            self.console.print(f"  {name}: {path}")

    def error(self, message: str, error_code: str | None = None) -> None:
        """Output error message.

        Args:
            message: Error message
            error_code: Optional error code
        """
        if self.json_mode:
            output = {"success": False, "error": message}
            if error_code:
                output["error_code"] = error_code
            print(json.dumps(output))
        else:
            self.console.print(f"[red]✗ Error:[/red] {message}")

    def success(self, message: str, data: dict | None = None) -> None:
        """Output success message.

        Args:
            message: Success message
            data: Optional data to include
        """
        if self.json_mode:
            output: dict[str, Any] = {"success": True, "message": message}
            if data:
                output["data"] = data
            print(json.dumps(output, cls=JSONEncoder))
        else:
            self.console.print(f"[green]✓[/green] {message}")
            if data:
                self._output_rich({"success": True, "data": data}, "")
