"""Raw measurement parsing and aggregation into the incomplete matrix X.

Records are bucketed into discrete street locations (greedy radius cover)
and fixed-width timeslots; each (location, slot) cell holds the median of
the readings that fell into it.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import InputError
from .geo import GeoPoint, haversine_array, points_to_array

log = logging.getLogger(__name__)

CSV_HEADER = ("timestamp", "lat", "lon", "value")
MATRIX_FORMAT = "aqcomplete-observations/1"


@dataclass(frozen=True, slots=True)
class MeasurementRecord:
    timestamp: float
    position: GeoPoint
    value: float


@dataclass
class ParseStats:
    rows: int = 0
    accepted: int = 0
    malformed: int = 0
    negative: int = 0

    @property
    def skipped(self) -> int:
        return self.malformed + self.negative


@dataclass(frozen=True)
class AggregationConfig:
    period_start: float
    period_end: float
    slot_duration: float = 3600.0
    radius: float = 100.0

    def __post_init__(self):
        if not self.slot_duration > 0:
            raise InputError(f"slot duration must be positive, got {self.slot_duration}")
        if not self.radius > 0:
            raise InputError(f"radius must be positive, got {self.radius}")
        if not self.period_end > self.period_start:
            raise InputError("period_end must be after period_start")

    @property
    def n_slots(self) -> int:
        return math.ceil((self.period_end - self.period_start) / self.slot_duration)

    def slot_times(self) -> list[float]:
        return [self.period_start + j * self.slot_duration for j in range(self.n_slots)]

    @classmethod
    def covering(cls, records, slot_duration=3600.0, radius=100.0):
        """Config whose period spans ``records``, aligned to the slot grid."""
        if not records:
            raise InputError("cannot derive an aggregation period from zero records")
        ts = [r.timestamp for r in records]
        start = math.floor(min(ts) / slot_duration) * slot_duration
        end = (math.floor(max(ts) / slot_duration) + 1) * slot_duration
        return cls(start, end, slot_duration, radius)


@dataclass(eq=False)
class ObservationMatrix:
    """Incomplete N x T matrix with known-entry mask.

    Unknown entries hold 0.0; ``mask`` is the source of truth.
    """

    values: np.ndarray
    mask: np.ndarray
    locations: list[GeoPoint]
    slot_times: list[float]
    counts: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64)
        self.mask = np.array(self.mask, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise InputError(f"values {self.values.shape} and mask {self.mask.shape} must be equal 2-D shapes")
        n, t = self.values.shape
        if n < 1 or t < 1:
            raise InputError("observation matrix needs N, T >= 1")
        if len(self.locations) != n:
            raise InputError(f"{len(self.locations)} locations for {n} rows")
        if len(self.slot_times) != t:
            raise InputError(f"{len(self.slot_times)} slot times for {t} columns")
        if not np.isfinite(self.values[self.mask]).all():
            raise InputError("known entries must be finite")
        self.values[~self.mask] = 0.0
        self.values.setflags(write=False)
        self.mask.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_known(self) -> int:
        return int(self.mask.sum())

    @property
    def density(self) -> float:
        return self.n_known / self.mask.size

    def coords(self) -> np.ndarray:
        return points_to_array(self.locations)

    def validate(self):
        """Check the invariants an aggregated (not split) matrix must hold."""
        empty = np.flatnonzero(~self.mask.any(axis=1))
        if len(empty):
            raise InputError(f"{len(empty)} locations without any known entry (first: row {empty[0]})")
        if self.n_known == 0:
            raise InputError("observation matrix has no known entries")

    def restrict(self, mask) -> "ObservationMatrix":
        """Same matrix with only the entries of ``mask`` (a subset of Ω) visible.

        Rows may end up entirely unknown; that is how held-out entries and
        cold locations are presented to the models.
        """
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self.mask.shape:
            raise InputError(f"mask shape {mask.shape} != {self.mask.shape}")
        if (mask & ~self.mask).any():
            raise InputError("restricting mask must be a subset of the known entries")
        return ObservationMatrix(np.where(mask, self.values, 0.0), mask, self.locations, self.slot_times)

    def to_json(self) -> dict:
        return {
            "format": MATRIX_FORMAT,
            "locations": [[p.lat, p.lon] for p in self.locations],
            "slot_times": list(self.slot_times),
            "values": self.values.tolist(),
            "mask": self.mask.astype(int).tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ObservationMatrix":
        try:
            locations = [GeoPoint(float(a), float(b)) for a, b in doc["locations"]]
            values = np.array(doc["values"], dtype=np.float64)
            mask = np.array(doc["mask"], dtype=np.int64)
            slot_times = [float(t) for t in doc["slot_times"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed observation matrix document: {exc}") from exc
        if not np.isin(mask, (0, 1)).all():
            raise InputError("mask entries must be 0 or 1")
        return cls(values, mask.astype(bool), locations, slot_times)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ObservationMatrix":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read observation matrix {path}: {exc}") from exc
        return cls.from_json(doc)


def parse_timestamp(text: str) -> float:
    """Integer epoch seconds or an ISO-8601 string (naive means UTC)."""
    text = text.strip()
    try:
        return float(int(text))
    except ValueError:
        pass
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def load_measurements(path) -> tuple[list[MeasurementRecord], ParseStats]:
    """Parse a measurement CSV, returning records sorted by time plus skip counts."""
    stats = ParseStats()
    records = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read measurements {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            log.warning("measurement file %s is empty", path)
            return [], stats
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise InputError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            stats.rows += 1
            try:
                if len(row) != 4:
                    raise ValueError("wrong column count")
                ts = parse_timestamp(row[0])
                value = float(row[3])
                if not (math.isfinite(ts) and math.isfinite(value)):
                    raise ValueError("non-finite field")
                point = GeoPoint(float(row[1]), float(row[2]))
            except (ValueError, InputError):
                stats.malformed += 1
                continue
            if value < 0:
                stats.negative += 1
                continue
            records.append(MeasurementRecord(ts, point, value))
    if stats.rows and stats.malformed > stats.rows / 2:
        raise InputError(f"{stats.malformed} of {stats.rows} rows in {path} are malformed")
    if stats.skipped:
        log.warning("skipped %d malformed and %d negative rows in %s", stats.malformed, stats.negative, path)
    if not records:
        log.warning("no usable measurements in %s", path)
    records.sort(key=lambda r: r.timestamp)
    stats.accepted = len(records)
    return records, stats


def parse_measurements(path) -> list[MeasurementRecord]:
    return load_measurements(path)[0]


def write_measurements(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            ts = int(r.timestamp) if float(r.timestamp).is_integer() else r.timestamp
            w.writerow([ts, repr(r.position.lat), repr(r.position.lon), repr(r.value)])


def _records_to_arrays(records):
    ts = np.fromiter((r.timestamp for r in records), dtype=np.float64, count=len(records))
    coords = np.array([[r.position.lat, r.position.lon] for r in records], dtype=np.float64).reshape(-1, 2)
    vals = np.fromiter((r.value for r in records), dtype=np.float64, count=len(records))
    return ts, coords, vals


def discretize_locations(records, r: float) -> list[GeoPoint]:
    """Greedy radius-``r`` cover of the record positions.

    Records are scanned in timestamp order (ties keep input order); a record
    farther than ``r`` from every location found so far opens a new one.
    """
    if not records:
        raise InputError("cannot discretize an empty record list")
    if not r > 0:
        raise InputError(f"radius must be positive, got {r}")
    order = sorted(range(len(records)), key=lambda k: records[k].timestamp)
    cap = 64
    lat = np.empty(cap)
    lon = np.empty(cap)
    n = 0
    for k in order:
        p = records[k].position
        if n:
            d = haversine_array(p.lat, p.lon, lat[:n], lon[:n])
            if d.min() <= r:
                continue
        if n == cap:
            cap *= 2
            lat = np.resize(lat, cap)
            lon = np.resize(lon, cap)
        lat[n], lon[n] = p.lat, p.lon
        n += 1
    return [GeoPoint(float(a), float(b)) for a, b in zip(lat[:n], lon[:n])]


def assign_locations(coords, locations, r: float, chunk: int = 2048) -> np.ndarray:
    """Index of the nearest location within ``r`` for each coordinate row, else -1."""
    loc = points_to_array(locations)
    out = np.full(len(coords), -1, dtype=np.int64)
    for s in range(0, len(coords), chunk):
        c = coords[s:s + chunk]
        d = haversine_array(c[:, 0:1], c[:, 1:2], loc[None, :, 0], loc[None, :, 1])
        best = d.argmin(axis=1)
        ok = d[np.arange(len(c)), best] <= r
        out[s:s + chunk] = np.where(ok, best, -1)
    return out


def aggregate(records, locations, config: AggregationConfig) -> ObservationMatrix:
    """Median-aggregate records into an ObservationMatrix.

    Records outside the period or farther than ``config.radius`` from every
    location are dropped (and logged). Locations left without any reading
    are removed so every row keeps at least one known entry.
    """
    if not locations:
        raise InputError("no locations to aggregate onto")
    ts, coords, vals = _records_to_arrays(records)
    in_period = (ts >= config.period_start) & (ts < config.period_end)
    dropped = int((~in_period).sum())
    if dropped:
        log.info("dropped %d records outside the aggregation period", dropped)
    ts, coords, vals = ts[in_period], coords[in_period], vals[in_period]
    if len(ts) == 0:
        raise InputError("zero records inside the aggregation period")
    loc_idx = assign_locations(coords, locations, config.radius)
    unassigned = int((loc_idx < 0).sum())
    if unassigned:
        log.warning("dropped %d records farther than %.1f m from every location", unassigned, config.radius)
    keep = loc_idx >= 0
    ts, vals, loc_idx = ts[keep], vals[keep], loc_idx[keep]
    if len(ts) == 0:
        raise InputError("no record could be assigned to a location")
    n_slots = config.n_slots
    slot_idx = np.minimum(((ts - config.period_start) // config.slot_duration).astype(np.int64), n_slots - 1)

    n = len(locations)
    cell = loc_idx * n_slots + slot_idx
    order = np.lexsort((vals, cell))
    cell_sorted, vals_sorted = cell[order], vals[order]
    uniq, start, count = np.unique(cell_sorted, return_index=True, return_counts=True)
    lo = vals_sorted[start + (count - 1) // 2]
    hi = vals_sorted[start + count // 2]
    med = 0.5 * (lo + hi)

    values = np.zeros(n * n_slots)
    counts = np.zeros(n * n_slots, dtype=np.int64)
    values[uniq] = med
    counts[uniq] = count
    values = values.reshape(n, n_slots)
    counts = counts.reshape(n, n_slots)
    mask = counts > 0

    occupied = mask.any(axis=1)
    if not occupied.all():
        log.info("removing %d locations with no readings in the period", int((~occupied).sum()))
    rows = np.flatnonzero(occupied)
    obs = ObservationMatrix(values[rows], mask[rows], [locations[i] for i in rows],
                            config.slot_times(), counts=counts[rows])
    return obs


def build_observations(records, config: AggregationConfig) -> ObservationMatrix:
    """Discretize then aggregate the records that fall inside the period."""
    in_period = [r for r in records if config.period_start <= r.timestamp < config.period_end]
    if not in_period:
        raise InputError("zero records inside the aggregation period")
    locations = discretize_locations(in_period, config.radius)
    return aggregate(in_period, locations, config)
