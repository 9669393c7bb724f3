"""Shared test fixtures for Oval Racer."""

import pytest

from oval_racer.raceline import RaceLineReference, generate_raceline
from oval_racer.track import RoadFrame, load_track
from oval_racer.vehicle import VehicleParams


@pytest.fixture(scope="session")
def track():
    """Default IMS-like oval."""
    return load_track()


@pytest.fixture(scope="session")
def vehicle():
    """Default vehicle parameters."""
    return VehicleParams()


@pytest.fixture(scope="session")
def raceline(track, vehicle):
    """Race line generated for the default oval."""
    return generate_raceline(track, vehicle)


@pytest.fixture(scope="session")
def reference(track, raceline):
    """Race line lookup by station."""
    return RaceLineReference(track, raceline)


@pytest.fixture
def frame(track):
    """Road-aligned frame anchored at the start of the main straight."""
    return RoadFrame(track, ego_station=100.0)


@pytest.fixture
def track_file(tmp_path):
    """A small valid track file: 100 m straights and 50 m radius turns."""
    path = tmp_path / "small.track"
    path.write_text(
        """
# small test oval
width 10
straight 100
arc 50 180
straight 100   # back straight
arc 50 180
"""
    )
    return path


@pytest.fixture
def config_file(tmp_path):
    """A TOML config overriding a few sections."""
    path = tmp_path / "ovalrace.toml"
    path.write_text(
        """
[planner]
r_opt = 0.3
n_targets = 5

[control]
l_d = 20.0

[output]
histogram_bins = 10
"""
    )
    return path
