"""Synthetic street grids, pollution fields and mobile-sensor traces.

The field is a sum of Gaussian plumes with a per-source diurnal cycle,
clipped at zero. Vehicles random-walk over grid intersections at constant
speed and log one noisy reading every ``record_interval`` seconds while
inside their daily operating window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError
from .geo import GeoPoint, haversine_array, offset_point
from .graph import Segment, StreetNetwork
from .ingest import MeasurementRecord

DAY = 86400.0
# 2018-05-01T00:00:00Z
DEFAULT_START = 1525132800


@dataclass(frozen=True)
class SynthConfig:
    grid_w: int = 12
    grid_h: int = 12
    block_m: float = 150.0
    origin: tuple[float, float] = (51.2194, 4.4025)
    n_sources: int = 6
    plume_scale: float = 250.0
    base_level: float = 20.0
    amplitude_min: float = 20.0
    amplitude_max: float = 80.0
    diurnal_strength: float = 0.6
    noise_sd: float = 3.0
    n_vehicles: int = 24
    days: int = 30
    speed_mps: float = 4.7
    record_interval: float = 60.0
    active_hours: tuple[float, float] = (0.0, 24.0)
    start_time: int = DEFAULT_START
    seed: int = 0

    def __post_init__(self):
        if self.grid_w < 2 or self.grid_h < 2:
            raise InputError("grid needs at least 2 x 2 intersections")
        positive = ("block_m", "plume_scale", "speed_mps", "record_interval", "days")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        if self.n_vehicles < 0 or self.n_sources < 0:
            raise InputError("n_vehicles and n_sources must be >= 0")
        if not 0 <= self.amplitude_min <= self.amplitude_max:
            raise InputError("need 0 <= amplitude_min <= amplitude_max")
        if self.noise_sd < 0 or self.base_level < 0 or self.diurnal_strength < 0:
            raise InputError("noise_sd, base_level and diurnal_strength must be >= 0")
        a, b = self.active_hours
        if not 0 <= a < b <= 24:
            raise InputError(f"active_hours must satisfy 0 <= start < end <= 24, got {self.active_hours}")


PRESETS = {
    # 12 x 12 blocks, 4 vehicles over 3 days: a few hundred locations, T = 72.
    "desk-scale": SynthConfig(grid_w=12, grid_h=12, n_vehicles=4, days=3, record_interval=600.0),
    # Aggregates (tau 1 h, r 100 m) to ~3.4k locations x 702 slots at ~0.7 % known entries.
    "paper-scale": SynthConfig(grid_w=60, grid_h=60, block_m=150.0, n_sources=80, n_vehicles=48, days=30,
                               record_interval=1800.0, active_hours=(7.0, 13.0)),
}


def preset(name: str, seed: int = 0) -> SynthConfig:
    try:
        return replace(PRESETS[name], seed=seed)
    except KeyError:
        raise InputError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def _intersection(config: SynthConfig, ix: int, iy: int) -> tuple[float, float]:
    east = (ix - (config.grid_w - 1) / 2) * config.block_m
    north = (iy - (config.grid_h - 1) / 2) * config.block_m
    return offset_point(config.origin, east, north)


def generate_network(config: SynthConfig) -> StreetNetwork:
    """Rectangular grid centred on ``config.origin``; one segment per street."""
    segs = []
    sid = 0
    for iy in range(config.grid_h):
        pts = tuple(GeoPoint(*_intersection(config, ix, iy)) for ix in range(config.grid_w))
        segs.append(Segment(sid, pts))
        sid += 1
    for ix in range(config.grid_w):
        pts = tuple(GeoPoint(*_intersection(config, ix, iy)) for iy in range(config.grid_h))
        segs.append(Segment(sid, pts))
        sid += 1
    return StreetNetwork(tuple(segs))


@dataclass(frozen=True, eq=False)
class GroundTruthField:
    source_lat: np.ndarray
    source_lon: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray
    base_level: float
    plume_scale: float
    diurnal_strength: float

    def evaluate(self, lat, lon, t) -> np.ndarray:
        """Vectorised concentration; ``lat``, ``lon``, ``t`` broadcast together."""
        lat, lon, t = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (lat, lon, t)))
        out = np.full(lat.shape, self.base_level, dtype=np.float64)
        for s in range(len(self.amplitude)):
            d = haversine_array(lat, lon, self.source_lat[s], self.source_lon[s])
            plume = np.exp(-d ** 2 / (2.0 * self.plume_scale ** 2))
            cycle = 1.0 + self.diurnal_strength * np.sin(2.0 * math.pi * t / DAY + self.phase[s])
            out += self.amplitude[s] * plume * cycle
        return np.maximum(out, 0.0)

    def __call__(self, p: GeoPoint, t: float) -> float:
        return float(self.evaluate(p.lat, p.lon, t))


def make_field(config: SynthConfig) -> GroundTruthField:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    half_w = (config.grid_w - 1) / 2 * config.block_m
    half_h = (config.grid_h - 1) / 2 * config.block_m
    east = rng.uniform(-half_w, half_w, config.n_sources)
    north = rng.uniform(-half_h, half_h, config.n_sources)
    pos = np.array([offset_point(config.origin, e, n) for e, n in zip(east, north)]).reshape(-1, 2)
    return GroundTruthField(
        source_lat=pos[:, 0], source_lon=pos[:, 1],
        amplitude=rng.uniform(config.amplitude_min, config.amplitude_max, config.n_sources),
        phase=rng.uniform(0.0, 2.0 * math.pi, config.n_sources),
        base_level=config.base_level, plume_scale=config.plume_scale,
        diurnal_strength=config.diurnal_strength,
    )


def field_value(field: GroundTruthField, p: GeoPoint, t: float) -> float:
    return field(p, t)


def _neighbours(config: SynthConfig, node):
    ix, iy = node
    out = []
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        jx, jy = ix + dx, iy + dy
        if 0 <= jx < config.grid_w and 0 <= jy < config.grid_h:
            out.append((jx, jy))
    return out


def simulate_vehicles(network: StreetNetwork, field: GroundTruthField, config: SynthConfig) -> list[MeasurementRecord]:
    """Noisy readings from random walks over the intersections of the grid.

    ``network`` must be the grid produced by :func:`generate_network` for the
    same config; walks run on its intersection lattice.
    """
    if config.n_vehicles == 0:
        return []
    if len(network.segments) != config.grid_w + config.grid_h:
        raise InputError("network does not match the configured grid")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    grid = np.array([[_intersection(config, ix, iy) for iy in range(config.grid_h)]
                     for ix in range(config.grid_w)])
    step = config.speed_mps * config.record_interval
    win_start, win_end = (h * 3600.0 for h in config.active_hours)

    times, lats, lons = [], [], []
    for _ in range(config.n_vehicles):
        node = (int(rng.integers(config.grid_w)), int(rng.integers(config.grid_h)))
        prev = None
        nxt = node
        along = 0.0  # metres travelled from ``node`` towards ``nxt``
        offset = float(rng.integers(int(config.record_interval)))
        for day in range(config.days):
            t = config.start_time + day * DAY + win_start + offset
            t_end = config.start_time + day * DAY + win_end
            while t < t_end:
                remaining = step
                while True:
                    if nxt == node:
                        choices = _neighbours(config, node)
                        if prev is not None and len(choices) > 1:
                            choices = [c for c in choices if c != prev]
                        nxt = choices[int(rng.integers(len(choices)))]
                        along = 0.0
                    left = config.block_m - along
                    if remaining < left:
                        along += remaining
                        break
                    remaining -= left
                    prev, node = node, nxt
                    along = 0.0
                frac = along / config.block_m
                a, b = grid[node], grid[nxt]
                times.append(t)
                lats.append(a[0] + frac * (b[0] - a[0]))
                lons.append(a[1] + frac * (b[1] - a[1]))
                t += config.record_interval
    times = np.asarray(times)
    lats = np.asarray(lats)
    lons = np.asarray(lons)
    clean = field.evaluate(lats, lons, times)
    noisy = np.maximum(clean + rng.normal(0.0, config.noise_sd, len(times)), 0.0) if config.noise_sd else clean
    order = np.argsort(times, kind="stable")
    return [MeasurementRecord(float(times[k]), GeoPoint(float(lats[k]), float(lons[k])), float(noisy[k]))
            for k in order]


def ground_truth_matrix(field: GroundTruthField, locations, slot_times, slot_duration: float = 3600.0) -> np.ndarray:
    """Noiseless field at every (location, slot centre)."""
    coords = np.array([[p.lat, p.lon] for p in locations]).reshape(-1, 2)
    centres = np.asarray(slot_times, dtype=np.float64) + slot_duration / 2.0
    return field.evaluate(coords[:, 0:1], coords[:, 1:2], centres[None, :])


@dataclass
class SyntheticDataset:
    config: SynthConfig
    network: StreetNetwork
    field: GroundTruthField
    records: list[MeasurementRecord]


def generate(config: SynthConfig) -> SyntheticDataset:
    network = generate_network(config)
    fld = make_field(config)
    return SyntheticDataset(config, network, fld, simulate_vehicles(network, fld, config))
