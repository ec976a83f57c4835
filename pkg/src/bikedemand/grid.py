"""City gridding and aggregation of trip records into per-slot demand counts.

Cell labels ``(i, j)`` are 1-based: ``i`` counts rows from the southern edge
(latitude), ``j`` counts columns from the western edge (longitude). Arrays
produced here are indexed 0-based, ``counts[i - 1, j - 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import kernels

SECONDS_PER_DAY = 86400


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class GeoPoint(NamedTuple):
    lon: float
    lat: float

    def validate(self) -> "GeoPoint":
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise InvalidInputError(f"point out of range: {self}")
        return self


@dataclass(frozen=True)
class GridMap:
    """Uniform ``n x m`` partition of a lon/lat bounding box into half-open cells."""

    lon_min: float
    lat_min: float
    lon_max: float
    lat_max: float
    n: int
    m: int
    lat_edges: np.ndarray = field(init=False, repr=False, compare=False)
    lon_edges: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise InvalidInputError(f"grid needs n, m >= 1, got {self.n}x{self.m}")
        if not (self.lon_min < self.lon_max and self.lat_min < self.lat_max):
            raise InvalidInputError("degenerate bounding box")
        GeoPoint(self.lon_min, self.lat_min).validate()
        GeoPoint(self.lon_max, self.lat_max).validate()
        # edges are computed once so every lookup agrees on exact boundaries
        lat_edges = self.lat_min + (self.lat_max - self.lat_min) * np.arange(self.n + 1) / self.n
        lon_edges = self.lon_min + (self.lon_max - self.lon_min) * np.arange(self.m + 1) / self.m
        lat_edges[-1] = self.lat_max
        lon_edges[-1] = self.lon_max
        lat_edges.flags.writeable = False
        lon_edges.flags.writeable = False
        object.__setattr__(self, "lat_edges", lat_edges)
        object.__setattr__(self, "lon_edges", lon_edges)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n, self.m

    @property
    def n_cells(self) -> int:
        return self.n * self.m

    @property
    def dlat(self) -> float:
        return (self.lat_max - self.lat_min) / self.n

    @property
    def dlon(self) -> float:
        return (self.lon_max - self.lon_min) / self.m

    def cell_bounds(self, i: int, j: int) -> tuple[float, float, float, float]:
        """(lon_lo, lat_lo, lon_hi, lat_hi) of 1-based cell (i, j)."""
        return (self.lon_edges[j - 1], self.lat_edges[i - 1],
                self.lon_edges[j], self.lat_edges[i])

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Center lon/lat of every cell, flattened in row-major (i, j) order."""
        clat = (self.lat_edges[:-1] + self.lat_edges[1:]) / 2.0
        clon = (self.lon_edges[:-1] + self.lon_edges[1:]) / 2.0
        lat, lon = np.meshgrid(clat, clon, indexing="ij")
        return lon.ravel(), lat.ravel()

    def cell_labels(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(1, self.n + 1) for j in range(1, self.m + 1)]

    def locate_many(self, lon, lat) -> tuple[np.ndarray, np.ndarray]:
        """0-based (row, col) for arrays of points; -1 marks points outside the box."""
        return kernels.locate_points(lon, lat, self.lon_edges, self.lat_edges)

    def locate(self, p: GeoPoint) -> tuple[int, int] | None:
        """1-based cell containing ``p``, or None when ``p`` is outside the box."""
        row, col = self.locate_many([p.lon], [p.lat])
        if row[0] < 0:
            return None
        return int(row[0]) + 1, int(col[0]) + 1

    def to_dict(self) -> dict:
        return {"lon_min": self.lon_min, "lat_min": self.lat_min,
                "lon_max": self.lon_max, "lat_max": self.lat_max,
                "n": self.n, "m": self.m}

    @classmethod
    def from_dict(cls, d: dict) -> "GridMap":
        return cls(float(d["lon_min"]), float(d["lat_min"]), float(d["lon_max"]),
                   float(d["lat_max"]), int(d["n"]), int(d["m"]))


def build_grid(bbox: tuple[float, float, float, float], n: int, m: int) -> GridMap:
    """Grid over ``bbox = (lon_min, lat_min, lon_max, lat_max)`` with n rows and m columns."""
    lon_min, lat_min, lon_max, lat_max = bbox
    return GridMap(float(lon_min), float(lat_min), float(lon_max), float(lat_max), int(n), int(m))


@dataclass(frozen=True)
class TripRecord:
    start: GeoPoint
    start_time: float
    end: GeoPoint
    end_time: float

    def __post_init__(self):
        if self.end_time < self.start_time:
            raise InvalidInputError("trip ends before it starts")


@dataclass
class TripTable:
    """Column-oriented trip records; timestamps are epoch seconds."""

    start_lon: np.ndarray
    start_lat: np.ndarray
    start_time: np.ndarray
    end_lon: np.ndarray
    end_lat: np.ndarray
    end_time: np.ndarray

    def __len__(self):
        return len(self.start_lon)

    @classmethod
    def from_records(cls, records: Iterable[TripRecord]) -> "TripTable":
        rows = [(r.start.lon, r.start.lat, r.start_time, r.end.lon, r.end.lat, r.end_time)
                for r in records]
        cols = np.array(rows, dtype=float).reshape(-1, 6).T
        return cls(*cols)

    def validate(self) -> "TripTable":
        if np.any(self.end_time < self.start_time):
            raise InvalidInputError("trip ends before it starts")
        return self


@dataclass
class DemandSet:
    """Per-cell, per-day, per-slot ride-start counts.

    ``counts[r, c, x, h]`` is the number of rides starting in 0-based cell
    (r, c) during slot ``h`` of day ``days[x]``.
    """

    grid: GridMap
    k: int
    days: np.ndarray
    counts: np.ndarray
    outside: int = 0

    def cell_days(self, i: int, j: int, min_total: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Days (and their count vectors) on which 1-based cell (i, j) saw demand."""
        c = self.counts[i - 1, j - 1]
        keep = c.sum(axis=1) >= min_total
        return self.days[keep], c[keep]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _slot_and_day(t: np.ndarray, k: int, utc_offset_s: float) -> tuple[np.ndarray, np.ndarray]:
    local = np.asarray(t, dtype=float) + utc_offset_s
    day = np.floor(local / SECONDS_PER_DAY).astype(np.int64)
    sod = local - day * SECONDS_PER_DAY
    slot = np.floor(sod / (SECONDS_PER_DAY // k)).astype(np.int64)
    np.clip(slot, 0, k - 1, out=slot)
    return day, slot


def aggregate_demands(records: TripTable | Sequence[TripRecord], grid: GridMap, k: int = 48,
                      utc_offset_s: float = 0.0, days: Sequence[int] | None = None) -> DemandSet:
    """Count ride starts per (cell, day, slot).

    Each record adds one to the cell of its start location, on the day and
    slot of its start time. Records starting outside the grid, or on days
    outside an explicit ``days`` list, are tallied in ``outside``.
    """
    if k < 1 or SECONDS_PER_DAY % k:
        raise InvalidInputError(f"k={k} does not divide a day into whole seconds")
    if not isinstance(records, TripTable):
        records = TripTable.from_records(records)
    row, col = grid.locate_many(records.start_lon, records.start_lat)
    day, slot = _slot_and_day(records.start_time, k, utc_offset_s)
    inside = row >= 0
    if days is None:
        day_list = np.unique(day[inside])
    else:
        day_list = np.asarray(sorted(set(int(d) for d in days)), dtype=np.int64)
    if len(day_list):
        pos = np.searchsorted(day_list, day)
        pos_c = np.minimum(pos, len(day_list) - 1)
        inside &= day_list[pos_c] == day
    else:
        pos_c = np.zeros_like(day)
        inside &= False
    n_days = len(day_list)
    flat = ((row[inside] * grid.m + col[inside]) * n_days + pos_c[inside]) * k + slot[inside]
    counts = np.bincount(flat, minlength=grid.n_cells * n_days * k)
    counts = counts.reshape(grid.n, grid.m, n_days, k).astype(np.int64)
    return DemandSet(grid, k, day_list, counts, outside=int(len(records) - inside.sum()))
