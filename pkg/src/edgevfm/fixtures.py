"""Paths to the bundled example inputs."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

FILES = (
    "default_space.json",
    "reference_calibration.csv",
    "profile_12scenes.csv",
    "profile_granularity.csv",
    "timeline_12scenes.json",
    "taxonomy_20.json",
    "mock_agent.json",
)


def data_path(name: str) -> Path:
    if name not in FILES:
        raise KeyError(f"no bundled file named {name!r}")
    return Path(str(resources.files(__package__).joinpath("data", name)))
