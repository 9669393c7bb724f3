"""Configuration management for Oval Racer."""

import logging
import tomllib
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .collision import SafetyParams
from .control import ControlGains
from .planner import PlannerParams
from .prediction import PredictionParams
from .raceline import RaceLineParams
from .simulation import SimParams
from .vehicle import VehicleParams

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for unreadable, unknown or invalid configuration values."""


class OutputParams(BaseModel):
    """Run artifact options."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    tick_log: bool = True
    debug_planner: bool = False
    histogram_bins: int = Field(default=20, ge=1)
    overtake_persistence: float = Field(default=2.0, ge=0)


class RaceSettings(BaseModel):
    """Complete run configuration, one section per TOML table."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    vehicle: VehicleParams = Field(default_factory=VehicleParams)
    planner: PlannerParams = Field(default_factory=PlannerParams)
    prediction: PredictionParams = Field(default_factory=PredictionParams)
    safety: SafetyParams = Field(default_factory=SafetyParams)
    control: ControlGains = Field(default_factory=ControlGains)
    sim: SimParams = Field(default_factory=SimParams)
    raceline: RaceLineParams = Field(default_factory=RaceLineParams)
    output: OutputParams = Field(default_factory=OutputParams)


def parse_override(text: str) -> tuple[list[str], Any]:
    """Split ``section.key=value``; the value is read as a TOML literal, else a string."""
    if "=" not in text:
        raise ConfigError(f"Override '{text}' must look like section.key=value")
    path, raw = text.split("=", 1)
    keys = [k.strip() for k in path.strip().split(".")]
    if len(keys) < 2 or not all(keys):
        raise ConfigError(f"Override key '{path}' must be section.key")
    try:
        value = tomllib.loads(f"value = {raw.strip()}")["value"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return keys, value


class ConfigManager:
    """Layered settings: built-in defaults < TOML file < ``--set`` overrides."""

    def __init__(self, config_path: Path | None = None, overrides: list[str] | None = None):
        """Initialize configuration manager.

        Args:
            config_path: Optional explicit path to config file. If not
                provided, searches standard locations.
            overrides: ``section.key=value`` strings applied last.

        Raises:
            ConfigError: If an explicit file is missing, or any value is
                unknown or fails validation.
        """
        if config_path is not None and not Path(config_path).exists():
            raise ConfigError(f"Config file not found: {config_path}")
        self.config_path = Path(config_path) if config_path else self._find_config()
        self.overrides = list(overrides or [])
        self._settings = self._load_config()

    @property
    def settings(self) -> RaceSettings:
        return self._settings

    @property
    def vehicle(self) -> VehicleParams:
        return self._settings.vehicle

    @property
    def planner(self) -> PlannerParams:
        return self._settings.planner

    @property
    def prediction(self) -> PredictionParams:
        return self._settings.prediction

    @property
    def safety(self) -> SafetyParams:
        return self._settings.safety

    @property
    def control(self) -> ControlGains:
        return self._settings.control

    @property
    def sim(self) -> SimParams:
        return self._settings.sim

    @property
    def raceline(self) -> RaceLineParams:
        return self._settings.raceline

    @property
    def output(self) -> OutputParams:
        return self._settings.output

    def _find_config(self) -> Path:
        """Find config file in standard locations."""
        locations = [
            Path.cwd() / "ovalrace.toml",
            Path.home() / ".config" / "oval-racer" / "config.toml",
            Path.home() / ".oval-racer" / "config.toml",
        ]
        for loc in locations:
            if loc.exists():
                return loc
        return Path.home() / ".config" / "oval-racer" / "config.toml"

    def _load_config(self) -> RaceSettings:
        data: dict[str, Any] = {}
        if self.config_path.exists():
            try:
                with open(self.config_path, "rb") as f:
                    data = tomllib.load(f)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{self.config_path}: {exc}") from exc
            logger.info("Loaded config from %s", self.config_path)

        for text in self.overrides:
            keys, value = parse_override(text)
            node = data
            for key in keys[:-1]:
                node = node.setdefault(key, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"Override '{text}' targets a non-table value")
            node[keys[-1]] = value
            logger.info("Config override %s = %r", ".".join(keys), value)

        try:
            return RaceSettings.model_validate(data)
        except ValidationError as exc:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
            )
            raise ConfigError(f"Invalid configuration: {problems}") from exc

    def get(self, key_path: str, default: Any = None) -> Any:
        """Get config value by dot-notation path.

        Args:
            key_path: Dot-separated path like 'planner.r_opt'
            default: Default value if path not found

        Returns:
            Configuration value or default
        """
        value: Any = self._settings
        for key in key_path.split("."):
            if isinstance(value, BaseModel) and key in type(value).model_fields:
                value = getattr(value, key)
            elif isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default
        return value if value is not None else default

    def effective(self) -> dict[str, Any]:
        """Fully resolved settings as plain JSON-ready data."""
        return self._settings.model_dump(mode="json")
