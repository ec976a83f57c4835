"""Per-cell geographic features from POIs, roads, night lights, transit and business centers.

All functions work on whole grids at once and return arrays flattened in
row-major (i, j) cell order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .grid import GridMap, InvalidInputError

DEFAULT_POI_CATEGORIES = 17
DEFAULT_ROAD_LEVELS = 29
DEFAULT_MISSING_DISTANCE_M = 50_000.0


def _pts(a, ncols) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros((0, ncols))
    if a.ndim != 2 or a.shape[1] != ncols:
        raise InvalidInputError(f"expected an (N, {ncols}) array, got shape {a.shape}")
    return a


@dataclass
class CityData:
    """Raw geographic inputs for one city.

    Arrays hold one row per entity: ``poi`` (lon, lat, category),
    ``roads`` (lon1, lat1, lon2, lat2, level), ``light`` (lon, lat, intensity),
    ``light_centers``/``transport`` (lon, lat), ``business`` (lon, lat, level).
    """

    poi: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    roads: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))
    light: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    light_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    transport: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    business: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.poi = _pts(self.poi, 3)
        self.roads = _pts(self.roads, 5)
        self.light = _pts(self.light, 3)
        self.light_centers = _pts(self.light_centers, 2)
        self.transport = _pts(self.transport, 2)
        self.business = _pts(self.business, 3)


def _cell_index(grid: GridMap, lon, lat) -> np.ndarray:
    row, col = grid.locate_many(lon, lat)
    return np.where(row >= 0, row * grid.m + col, -1)


def poi_features(poi, grid: GridMap, n_categories: int = DEFAULT_POI_CATEGORIES):
    """Category counts, total count and category entropy per cell.

    Returns (counts (cells, C), total (cells,), entropy (cells,)). Entropy is
    0 for cells without POIs.
    """
    poi = _pts(poi, 3)
    cat = poi[:, 2].astype(np.int64)
    if len(cat) and (cat.min() < 1 or cat.max() > n_categories):
        raise InvalidInputError(f"POI category outside [1, {n_categories}]")
    cell = _cell_index(grid, poi[:, 0], poi[:, 1])
    keep = cell >= 0
    flat = cell[keep] * n_categories + (cat[keep] - 1)
    counts = np.bincount(flat, minlength=grid.n_cells * n_categories)
    counts = counts.reshape(grid.n_cells, n_categories).astype(float)
    total = counts.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(total[:, None] > 0, counts / np.where(total[:, None] > 0, total[:, None], 1), 0.0)
        terms = np.where(frac > 0, -frac * np.log(np.where(frac > 0, frac, 1.0)), 0.0)
    entropy = np.clip(terms.sum(axis=1), 0.0, np.log(n_categories))
    return counts, total, entropy


def road_features(roads, grid: GridMap, n_levels: int = DEFAULT_ROAD_LEVELS):
    """Per-level counts of segments overlapping each cell, and their total.

    A segment overlaps a cell when some point of it lies in the half-open
    cell rectangle.
    """
    roads = _pts(roads, 5)
    level = roads[:, 4].astype(np.int64)
    if len(level) and (level.min() < 1 or level.max() > n_levels):
        raise InvalidInputError(f"road level outside [1, {n_levels}]")
    counts = kernels.road_cell_counts(roads[:, 0], roads[:, 1], roads[:, 2], roads[:, 3],
                                      level, n_levels, grid.lon_edges, grid.lat_edges)
    counts = counts.reshape(grid.n_cells, n_levels).astype(float)
    return counts, counts.sum(axis=1)


def nearest_center(grid: GridMap, points, missing: float = DEFAULT_MISSING_DISTANCE_M):
    """Haversine distance from each cell center to the nearest point, and that point's index.

    With no points, every distance is ``missing`` and every index -1.
    """
    points = np.asarray(points, dtype=float)
    clon, clat = grid.cell_centers()
    if points.size == 0:
        return np.full(grid.n_cells, float(missing)), np.full(grid.n_cells, -1, dtype=np.int64)
    return kernels.nearest_haversine(clon, clat, points[:, 0], points[:, 1])


def light_features(light, centers, grid: GridMap, missing: float = DEFAULT_MISSING_DISTANCE_M):
    """Mean intensity of light samples inside each cell (0 if none) and distance to the nearest light center."""
    light = _pts(light, 3)
    # canonical row order keeps the floating-point sums independent of input order
    light = light[np.lexsort(light.T[::-1])]
    cell = _cell_index(grid, light[:, 0], light[:, 1])
    keep = cell >= 0
    total = np.bincount(cell[keep], weights=light[keep, 2], minlength=grid.n_cells)
    num = np.bincount(cell[keep], minlength=grid.n_cells)
    avg = np.where(num > 0, total / np.maximum(num, 1), 0.0)
    dist, _ = nearest_center(grid, _pts(centers, 2), missing)
    return avg, dist


def transport_features(centers, grid: GridMap, missing: float = DEFAULT_MISSING_DISTANCE_M):
    """Number of transit centers inside each cell and distance to the nearest one."""
    centers = _pts(centers, 2)
    cell = _cell_index(grid, centers[:, 0], centers[:, 1])
    num = np.bincount(cell[cell >= 0], minlength=grid.n_cells).astype(float)
    dist, _ = nearest_center(grid, centers, missing)
    return num, dist


def business_features(centers, grid: GridMap, missing: float = DEFAULT_MISSING_DISTANCE_M):
    """Distance to the nearest business center and that center's level (0 when there are none)."""
    centers = _pts(centers, 3)
    dist, idx = nearest_center(grid, centers[:, :2], missing)
    if len(centers) == 0:
        return dist, np.zeros(grid.n_cells)
    return dist, centers[idx, 2].astype(float)


def feature_columns(n_categories: int = DEFAULT_POI_CATEGORIES,
                    n_levels: int = DEFAULT_ROAD_LEVELS) -> list[str]:
    return ([f"P{c}" for c in range(1, n_categories + 1)] + ["P_num", "P_en"]
            + [f"R{r}" for r in range(1, n_levels + 1)] + ["R_num"]
            + ["S_a", "S_dis", "T_num", "T_dis", "B_dis", "B_level"])


@dataclass
class FeatureMatrix:
    """Raw features, one row per cell in row-major (i, j) order."""

    grid: GridMap
    columns: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_cells, len(self.columns)):
            raise InvalidInputError(
                f"feature matrix shape {self.values.shape} does not match "
                f"{self.grid.n_cells} cells x {len(self.columns)} columns")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("feature matrix contains NaN or Inf")

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]


def build_feature_matrix(city: CityData, grid: GridMap, n_categories: int = DEFAULT_POI_CATEGORIES,
                         n_levels: int = DEFAULT_ROAD_LEVELS,
                         missing: float = DEFAULT_MISSING_DISTANCE_M) -> FeatureMatrix:
    p_vec, p_num, p_en = poi_features(city.poi, grid, n_categories)
    r_vec, r_num = road_features(city.roads, grid, n_levels)
    s_a, s_dis = light_features(city.light, city.light_centers, grid, missing)
    t_num, t_dis = transport_features(city.transport, grid, missing)
    b_dis, b_level = business_features(city.business, grid, missing)
    values = np.column_stack([p_vec, p_num, p_en, r_vec, r_num, s_a, s_dis, t_num, t_dis, b_dis, b_level])
    return FeatureMatrix(grid, feature_columns(n_categories, n_levels), values)


def derive_light_centers(light, grid: GridMap, percentile: float = 99.0) -> np.ndarray:
    """Light centers as local maxima of the cell-averaged intensity grid.

    A cell qualifies when its mean intensity is at or above the given
    percentile of all cell means and no 8-neighbor is brighter. Returns the
    centers of qualifying cells as (lon, lat) rows.
    """
    avg, _ = light_features(light, np.zeros((0, 2)), grid)
    img = avg.reshape(grid.n, grid.m)
    cut = np.percentile(avg, percentile)
    padded = np.pad(img, 1, constant_values=-np.inf)
    neigh = np.max(np.stack([padded[1 + di:1 + di + grid.n, 1 + dj:1 + dj + grid.m]
                             for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]), axis=0)
    peak = (img >= cut) & (img >= neigh) & (img > 0)
    clon, clat = grid.cell_centers()
    flat = np.flatnonzero(peak.ravel())
    return np.column_stack([clon[flat], clat[flat]])
