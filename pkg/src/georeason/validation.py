"""Small input-check helpers shared across the package."""

from __future__ import annotations

import math


def check_lat_lon(lat: float, lon: float, what: str = "coordinate") -> None:
    """Raise ValueError unless (lat, lon) is a finite WGS84 point."""
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise ValueError(f"{what} must be finite, got ({lat}, {lon})")
    if not -90.0 <= lat <= 90.0:
        raise ValueError(f"{what} latitude {lat} outside [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise ValueError(f"{what} longitude {lon} outside [-180, 180]")


def check_probability(p: float, name: str) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")


def check_positive(x: float, name: str) -> None:
    if not x > 0:
        raise ValueError(f"{name} must be > 0, got {x}")
