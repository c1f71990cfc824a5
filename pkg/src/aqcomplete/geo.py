"""Geodesic primitives: points, Haversine distances and radius queries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

# IUGG mean Earth radius, metres.
EARTH_RADIUS_M = 6_371_008.8


@dataclass(frozen=True, slots=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise InputError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise InputError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise InputError(f"longitude {self.lon} outside [-180, 180]")

    def as_tuple(self) -> tuple[float, float]:
        return (self.lat, self.lon)


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in metres between two points."""
    for p in (a, b):
        if not (math.isfinite(p.lat) and math.isfinite(p.lon)):
            raise InputError(f"non-finite coordinate ({p.lat}, {p.lon})")
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    h = min(1.0, max(0.0, h))
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


def haversine_array(lat1, lon1, lat2, lon2):
    """Vectorised Haversine distance in metres; inputs broadcast like numpy.

    >>> round(float(haversine_array(0.0, 0.0, 0.0, 90.0)))
    10007557
    """
    lat1, lon1, lat2, lon2 = (np.asarray(v, dtype=np.float64) for v in (lat1, lon1, lat2, lon2))
    if not (np.isfinite(lat1).all() and np.isfinite(lon1).all()
            and np.isfinite(lat2).all() and np.isfinite(lon2).all()):
        raise InputError("non-finite coordinate in distance query")
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(lon2 - lon1)
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    h = np.clip(h, 0.0, 1.0)
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(h))


def pairwise_distances(coords) -> np.ndarray:
    """N x N distance matrix (metres) for an (N, 2) array of [lat, lon]."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    lat, lon = coords[:, 0], coords[:, 1]
    d = haversine_array(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    np.fill_diagonal(d, 0.0)
    return d


def within_radius(center: GeoPoint, coords, radius_m: float) -> np.ndarray:
    """Indices of ``coords`` rows lying within ``radius_m`` of ``center``."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    d = haversine_array(center.lat, center.lon, coords[:, 0], coords[:, 1])
    return np.flatnonzero(d <= radius_m)


def points_to_array(points) -> np.ndarray:
    return np.array([[p.lat, p.lon] for p in points], dtype=np.float64).reshape(-1, 2)


def local_projection(coords, origin: tuple[float, float]) -> np.ndarray:
    """Equirectangular projection to metres around ``origin``.

    Only meant for short ranges (snapping tolerances, synthetic grids).
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    lat0, lon0 = origin
    k = math.radians(1.0) * EARTH_RADIUS_M
    x = (coords[:, 1] - lon0) * k * math.cos(math.radians(lat0))
    y = (coords[:, 0] - lat0) * k
    return np.column_stack([x, y])


def offset_point(origin: tuple[float, float], east_m: float, north_m: float) -> tuple[float, float]:
    """Inverse of :func:`local_projection` for a single offset."""
    lat0, lon0 = origin
    k = math.radians(1.0) * EARTH_RADIUS_M
    return (lat0 + north_m / k, lon0 + east_m / (k * math.cos(math.radians(lat0))))
