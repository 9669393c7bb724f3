"""Simplified race-car parameters: aero drag, downforce, power and tire limits."""

from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

GRAVITY = 9.81
_MIN_DRIVE_SPEED = 1.0


class VehicleParams(BaseModel):
    """Point-mass race car with speed-dependent grip.

    ``c_drag`` and ``c_down`` already include 0.5 * rho * A * C. When
    ``c_drag`` is omitted it is derived so that full power balances drag
    exactly at ``v_max``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    mass: float = Field(default=750.0, gt=0)
    length: float = Field(default=5.0, gt=0)
    width: float = Field(default=2.0, gt=0)
    power: float = Field(default=480_000.0, gt=0)
    v_max: float = Field(default=83.0, gt=0)
    c_drag: float | None = Field(default=None, gt=0)
    c_down: float = Field(default=0.7185, ge=0)
    mu: float = Field(default=1.6, gt=0)
    brake_force: float = Field(default=1.6 * GRAVITY * 750.0, gt=0)
    cornering_drag: float = Field(default=0.06, ge=0)
    yaw_accel_max: float = Field(default=8.0, gt=0)

    @model_validator(mode="before")
    @classmethod
    def _derive_drag(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("c_drag") is None:
            power = data.get("power", cls.model_fields["power"].default)
            v_max = data.get("v_max", cls.model_fields["v_max"].default)
            data = {**data, "c_drag": power / v_max**3}
        return data

    @property
    def drag(self) -> float:
        return float(self.c_drag)  # type: ignore[arg-type]

    def drafted(self, drag_factor: float) -> "VehicleParams":
        """Copy with drag scaled by a slipstream factor, rounded to 0.01.

        The top speed moves with the power balance, by the factor's inverse cube root.
        """
        factor = round(drag_factor, 2)
        if factor >= 1.0:
            return self
        return self.model_copy(
            update={"c_drag": self.drag * factor, "v_max": self.v_max / float(np.cbrt(factor))}
        )

    def a_lat_max(self, v: np.ndarray | float) -> np.ndarray | float:
        """Lateral acceleration limit, growing with downforce."""
        return self.mu * (GRAVITY + self.c_down * np.square(v) / self.mass)

    def traction_force(self, v: np.ndarray | float) -> np.ndarray | float:
        return self.mu * (self.mass * GRAVITY + self.c_down * np.square(v))

    def drive_force(self, v: np.ndarray | float) -> np.ndarray | float:
        """Full-throttle tractive force: power-limited, capped by traction."""
        v_safe = np.maximum(v, _MIN_DRIVE_SPEED)
        return np.minimum(self.power / v_safe, self.traction_force(v))

    def accel(self, v: np.ndarray | float) -> np.ndarray | float:
        """Full-throttle straight-line acceleration, never negative."""
        force = self.drive_force(v) - self.drag * np.square(v)
        return np.maximum(force / self.mass, 0.0)

    def brake_decel(self, v: np.ndarray | float) -> np.ndarray | float:
        return (self.brake_force + self.drag * np.square(v)) / self.mass

    def v_top(self, curvature: np.ndarray | float) -> np.ndarray | float:
        """Steady full-throttle speed on a path of constant curvature.

        Solves P / v = c_drag v^2 + c_corner m v^2 |kappa|, the balance
        between power and aero plus tire-slip drag. Equals ``v_max`` on a
        straight.
        """
        resistance = self.drag + self.cornering_drag * self.mass * np.abs(curvature)
        return np.cbrt(self.power / resistance)

    def lateral_speed_limit(
        self, curvature: np.ndarray | float, tol: float = 1e-10, max_iter: int = 10_000
    ) -> np.ndarray:
        """Largest v with v^2 |kappa| <= a_lat_max(v), by fixed-point iteration.

        Starts at ``v_max`` and iterates v <- sqrt(a_lat_max(v) / |kappa|),
        which decreases monotonically toward the fixed point when the cap is
        binding. Curvatures that never bind return ``v_max``.
        """
        kappa = np.abs(np.atleast_1d(np.asarray(curvature, dtype=float)))
        v = np.full(kappa.shape, self.v_max)
        curved = kappa > 0
        if not np.any(curved):
            return v
        k = kappa[curved]
        vc = np.full(k.shape, self.v_max)
        for _ in range(max_iter):
            nxt = np.minimum(self.v_max, np.sqrt(self.a_lat_max(vc) / k))
            if np.max(np.abs(nxt - vc)) < tol:
                vc = nxt
                break
            vc = nxt
        v[curved] = vc
        return v

    def speed_limit(self, curvature: np.ndarray | float) -> np.ndarray:
        """Attainable speed on a path of given curvature: power and grip."""
        return np.minimum(self.v_top(curvature), self.lateral_speed_limit(curvature))
