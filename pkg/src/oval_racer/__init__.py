"""Oval Racer - point-mass maneuver planning and multi-vehicle race simulation on an oval."""

__version__ = "1.0.0"
