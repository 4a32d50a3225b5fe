"""Bundled dataset fixtures and their provenance.

Two crossover datasets ship with the package: a three-period blood-pressure
trial (12 subjects, 10 measurements per period) and a two-period hydration
trial (79 students, one count per period).  The bundled CSVs are synthetic
stand-ins that reproduce the published design geometry; see
``data/PROVENANCE.json`` and the README for how to substitute the original
exports.  The ``CROSSFIT_ARTERIAL`` / ``CROSSFIT_WATER`` environment
variables point the loaders at replacement files.
"""

import json
import os
from pathlib import Path

from .design import DesignFrame, load_design

__all__ = ["ARTERIAL_SCHEMA", "WATER_SCHEMA", "arterial_path", "water_path",
           "load_arterial", "load_water", "fixture_provenance", "is_standin"]

DATA_DIR = Path(__file__).parent / "data"

ARTERIAL_SCHEMA = {
    "unit": "Subject", "period": "Period", "treatment": "Treatment",
    "response": "Pressure", "time": "Time",
}
WATER_SCHEMA = {
    "unit": "ID", "period": "Period", "treatment": "Treatment",
    "response": "LCC", "covariates": ["Age"],
}

_ENV = {"arterial": "CROSSFIT_ARTERIAL", "water": "CROSSFIT_WATER"}


def _path(name: str) -> Path:
    override = os.environ.get(_ENV[name])
    if override:
        return Path(override)
    return DATA_DIR / f"{name}.csv"


def arterial_path() -> Path:
    return _path("arterial")


def water_path() -> Path:
    return _path("water")


def fixture_provenance() -> dict:
    with open(DATA_DIR / "PROVENANCE.json") as fh:
        return json.load(fh)


def is_standin(name: str) -> bool:
    """True when the fixture in use is the bundled synthetic stand-in."""
    if os.environ.get(_ENV[name]):
        return False
    return bool(fixture_provenance()[name].get("synthetic_standin", False))


def load_arterial() -> DesignFrame:
    return load_design(arterial_path(), ARTERIAL_SCHEMA)


def load_water() -> DesignFrame:
    return load_design(water_path(), WATER_SCHEMA)
