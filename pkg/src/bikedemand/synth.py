"""Seeded synthetic cities with planted demand patterns.

A city is a set of placed entities (transit stations, business centers,
residential zones, parks) plus the geographic data they imply: POIs whose
categories depend on the nearby entity, roads, and a night-light lattice.
Each cell's planted daily pattern is a mixture of archetype curves weighted
by inverse distance to the entities around it, so the entity->pattern rule
is shared by every city built with the same spec while layouts differ by seed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .features import CityData, derive_light_centers
from .grid import SECONDS_PER_DAY, DemandSet, GridMap, TripTable, build_grid

ENTITY_TYPES = ("transit", "business", "residential", "park")
ARCHETYPES = ("triple_peak", "double_peak", "commute", "flat", "single_peak")
# archetype fed by each entity type, in ENTITY_TYPES order; single_peak is the background
_ENTITY_ARCHETYPE = (0, 1, 2, 3)

# (peak hour, relative amplitude, width multiplier)
_PEAKS = {
    "triple_peak": ((8.0, 1.0, 1.0), (12.5, 1.0, 1.0), (18.5, 1.0, 1.0)),
    "double_peak": ((10.0, 1.0, 1.0), (16.5, 1.0, 1.0)),
    "commute": ((6.5, 1.0, 1.0), (20.5, 0.8, 1.0)),
    "flat": (),
    "single_peak": ((15.0, 1.0, 4.0),),
}

# POI categories emitted around each entity type; 13..17 are background
_POI_CATEGORIES = {"transit": (1, 2), "business": (3, 4, 5, 6), "residential": (7, 8, 9, 10),
                   "park": (11, 12)}
_BACKGROUND_CATEGORIES = (13, 14, 15, 16, 17)
DAY0_EPOCH = 1_493_596_800  # 2017-05-01T00:00:00Z


@dataclass
class SyntheticCitySpec:
    n: int = 20
    m: int = 20
    bbox: tuple[float, float, float, float] = (116.20, 39.80, 116.44, 39.98)
    k: int = 48
    days: int = 28
    intensity: float = 200.0
    n_transit: int = 10
    n_business: int = 5
    n_residential: int = 12
    n_park: int = 6
    min_separation: float = 1.0  # cells
    peak_width_h: float = 0.75
    floor: float = 0.05
    kernel_offset: float = 0.5  # cells
    kernel_cutoff: float = 4.0  # cells
    background_weight: float = 0.25
    transit_floor: float = 0.8
    poi_rate: dict = field(default_factory=lambda: {"transit": 6.0, "business": 12.0,
                                                    "residential": 10.0, "park": 5.0})
    background_poi_per_cell: float = 1.5
    light_per_cell: int = 3

    def counts(self) -> tuple[int, ...]:
        return (self.n_transit, self.n_business, self.n_residential, self.n_park)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bbox"] = list(self.bbox)
        return d


@dataclass
class SyntheticCity:
    spec: SyntheticCitySpec
    seed: int
    grid: GridMap
    entities: dict  # type -> (N, 2) positions in cell units (x along lon, y along lat)
    business_levels: np.ndarray
    data: CityData
    weights: np.ndarray  # (cells, archetypes) mixture weights
    planted: np.ndarray  # (cells, k)

    def planted_map(self) -> dict:
        return {c: self.planted[r] for r, c in enumerate(self.grid.cell_labels())}


def archetype_curve(name: str, k: int, width_h: float = 0.75, floor: float = 0.05) -> np.ndarray:
    """Archetype daily curve: circular Gaussian peaks over a constant floor, normalized."""
    h = (np.arange(k) + 0.5) * 24.0 / k
    curve = np.full(k, floor)
    for hour, amp, wmul in _PEAKS[name]:
        # peaks sit on slot centers so the peak slot is unambiguous
        d = np.abs(h - (int(hour * k / 24.0) + 0.5) * 24.0 / k)
        d = np.minimum(d, 24.0 - d)
        curve += amp * np.exp(-0.5 * (d / (width_h * wmul)) ** 2)
    return curve / curve.sum()


def archetype_peak_slots(name: str, k: int) -> list[int]:
    return [int(hour * k / 24.0) for hour, _, _ in _PEAKS[name]]


def _place(rng, count, n, m, placed, min_sep):
    pts = []
    for _ in range(count):
        for _attempt in range(1000):
            p = np.array([rng.uniform(0.5, m - 0.5), rng.uniform(0.5, n - 0.5)])
            if all(np.hypot(*(p - q)) >= min_sep for q in placed):
                break
        placed.append(p)
        pts.append(p)
    return np.array(pts).reshape(-1, 2)


def _to_lonlat(grid: GridMap, xy: np.ndarray) -> np.ndarray:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    lon = grid.lon_min + np.clip(xy[:, 0], 0, grid.m) * grid.dlon
    lat = grid.lat_min + np.clip(xy[:, 1], 0, grid.n) * grid.dlat
    # keep generated points strictly inside the bounding box
    lon = np.minimum(lon, np.nextafter(grid.lon_max, -np.inf))
    lat = np.minimum(lat, np.nextafter(grid.lat_max, -np.inf))
    return np.column_stack([lon, lat])


def mixture_weights(spec: SyntheticCitySpec, entities: dict) -> np.ndarray:
    """Per-cell archetype weights from inverse-distance kernels around entities.

    ``1 / (d + offset)`` for entities closer than the cutoff (distances in
    cell units from the cell center), plus a constant background weight,
    normalized per cell. Cells containing a transit station keep at least
    ``transit_floor`` of the mass on the transit archetype.
    """
    n, m = spec.n, spec.m
    cy, cx = np.meshgrid(np.arange(n) + 0.5, np.arange(m) + 0.5, indexing="ij")
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    raw = np.zeros((n * m, len(ARCHETYPES)))
    for t, arch in zip(ENTITY_TYPES, _ENTITY_ARCHETYPE):
        pts = entities[t]
        if len(pts) == 0:
            continue
        d = np.hypot(centers[:, None, 0] - pts[None, :, 0], centers[:, None, 1] - pts[None, :, 1])
        raw[:, arch] = np.where(d < spec.kernel_cutoff, 1.0 / (d + spec.kernel_offset), 0.0).sum(axis=1)
    raw[:, ARCHETYPES.index("single_peak")] = spec.background_weight
    w = raw / raw.sum(axis=1, keepdims=True)
    tr = entities["transit"]
    if len(tr):
        has = np.zeros(n * m, dtype=bool)
        has[np.floor(tr[:, 1]).astype(int) * m + np.floor(tr[:, 0]).astype(int)] = True
        low = has & (w[:, 0] < spec.transit_floor)
        rest = 1.0 - w[low, 0]
        w[low, 1:] *= (1.0 - spec.transit_floor) / rest[:, None]
        w[low, 0] = spec.transit_floor
    return w


def generate_city(spec: SyntheticCitySpec | None = None, seed: int = 0) -> SyntheticCity:
    spec = spec or SyntheticCitySpec()
    rng = np.random.default_rng(seed)
    grid = build_grid(spec.bbox, spec.n, spec.m)
    placed: list = []
    entities = {t: _place(rng, c, spec.n, spec.m, placed, spec.min_separation)
                for t, c in zip(ENTITY_TYPES, spec.counts())}
    levels = rng.integers(1, 4, size=len(entities["business"]))

    # POIs: clustered around entities with type-specific categories, plus background
    poi = []
    radius = {"transit": 0.3, "business": 0.8, "residential": 0.6, "park": 0.5}
    for t in ENTITY_TYPES:
        cats = _POI_CATEGORIES[t]
        for e, p in enumerate(entities[t]):
            rate = spec.poi_rate[t] * (levels[e] if t == "business" else 1)
            cnt = rng.poisson(rate)
            off = rng.normal(0, radius[t], size=(cnt, 2))
            poi.append(np.column_stack([_to_lonlat(grid, p + off), rng.choice(cats, size=cnt)]))
    nb = rng.poisson(spec.background_poi_per_cell * spec.n * spec.m)
    bg = np.column_stack([rng.uniform(0, spec.m, nb), rng.uniform(0, spec.n, nb)])
    poi.append(np.column_stack([_to_lonlat(grid, bg), rng.choice(_BACKGROUND_CATEGORIES, size=nb)]))
    poi = np.vstack(poi)

    # roads: arterials every 4 cells (levels 1-3) plus short local segments (levels 4-29)
    roads = []
    for y in np.arange(2.0, spec.n, 4.0):
        a = _to_lonlat(grid, [[0.0, y], [spec.m, y]])
        roads.append([*a[0], *a[1], rng.integers(1, 4)])
    for x in np.arange(2.0, spec.m, 4.0):
        a = _to_lonlat(grid, [[x, 0.0], [x, spec.n]])
        roads.append([*a[0], *a[1], rng.integers(1, 4)])
    anchors = [entities["business"], entities["residential"], entities["transit"]]
    starts = [p + rng.normal(0, 0.7, size=(rng.poisson(8), 2)) for grp in anchors for p in grp]
    starts.append(np.column_stack([rng.uniform(0, spec.m, spec.n * spec.m // 2),
                                   rng.uniform(0, spec.n, spec.n * spec.m // 2)]))
    starts = np.vstack(starts)
    ang = rng.uniform(0, np.pi, len(starts))
    length = rng.uniform(0.2, 0.9, len(starts))
    ends = starts + length[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
    lvl = rng.integers(4, 30, len(starts))
    roads = np.vstack([np.array(roads, dtype=float).reshape(-1, 5),
                       np.column_stack([_to_lonlat(grid, starts), _to_lonlat(grid, ends), lvl])])

    # night light on a regular lattice
    s = spec.light_per_cell
    ly, lx = np.meshgrid((np.arange(spec.n * s) + 0.5) / s, (np.arange(spec.m * s) + 0.5) / s, indexing="ij")
    lxy = np.column_stack([lx.ravel(), ly.ravel()])
    inten = 5.0 + rng.uniform(0, 1, len(lxy))
    for t, amp, width in (("business", 40.0, 1.5), ("transit", 10.0, 0.5), ("residential", 8.0, 1.0)):
        for e, p in enumerate(entities[t]):
            scale = levels[e] if t == "business" else 1
            inten += amp * scale * np.exp(-0.5 * np.sum((lxy - p) ** 2, axis=1) / width ** 2)
    light = np.column_stack([_to_lonlat(grid, lxy), inten])

    data = CityData(poi=poi, roads=roads, light=light,
                    transport=_to_lonlat(grid, entities["transit"]),
                    business=np.column_stack([_to_lonlat(grid, entities["business"]), levels]))
    data.light_centers = derive_light_centers(light, grid, percentile=97.0)

    w = mixture_weights(spec, entities)
    arche = np.array([archetype_curve(a, spec.k, spec.peak_width_h, spec.floor) for a in ARCHETYPES])
    planted = w @ arche
    planted /= planted.sum(axis=1, keepdims=True)
    return SyntheticCity(spec, seed, grid, entities, levels, data, w, planted)


def sample_counts(planted, intensity, days: int, seed: int = 0) -> np.ndarray:
    """Poisson counts (cells, days, k) with mean ``intensity * pattern[slot]`` per cell and day."""
    planted = np.asarray(planted, dtype=float)
    lam = np.broadcast_to(np.asarray(intensity, dtype=float).reshape(-1, 1), (planted.shape[0], 1))
    if np.any(lam < 0):
        raise ValueError("intensities must be nonnegative")
    rng = np.random.default_rng(seed)
    mean = (lam * planted)[:, None, :]
    return rng.poisson(np.broadcast_to(mean, (planted.shape[0], days, planted.shape[1])))


def counts_to_demand(city: SyntheticCity, counts: np.ndarray, day0: int = DAY0_EPOCH // SECONDS_PER_DAY) -> DemandSet:
    g = city.grid
    c = counts.reshape(g.n, g.m, counts.shape[1], counts.shape[2])
    return DemandSet(g, counts.shape[2], np.arange(day0, day0 + counts.shape[1]), c.astype(np.int64), 0)


def sample_records(city: SyntheticCity, intensity=None, days: int | None = None, seed: int = 0) -> TripTable:
    """Trip records whose aggregation equals :func:`sample_counts` for the same seed.

    Start points are uniform inside the cell, start times uniform integer
    seconds inside the slot; ends are short random hops (unused downstream).
    """
    spec, g = city.spec, city.grid
    intensity = spec.intensity if intensity is None else intensity
    days = spec.days if days is None else days
    counts = sample_counts(city.planted, intensity, days, seed)
    k = counts.shape[2]
    slot_len = SECONDS_PER_DAY // k
    cell, day, slot = np.nonzero(counts)
    rep = counts[cell, day, slot]
    cell, day, slot = (np.repeat(a, rep) for a in (cell, day, slot))
    rng = np.random.default_rng([seed, 1])
    N = len(cell)
    r, c = np.divmod(cell, g.m)
    margin = 1e-3
    lon = g.lon_edges[c] + g.dlon * (margin + (1 - 2 * margin) * rng.random(N))
    lat = g.lat_edges[r] + g.dlat * (margin + (1 - 2 * margin) * rng.random(N))
    t = DAY0_EPOCH + day * SECONDS_PER_DAY + slot * slot_len + rng.integers(0, slot_len, N)
    hop = rng.normal(0, 0.005, size=(N, 2))
    dur = rng.integers(120, 1800, N)
    return TripTable(lon, lat, t.astype(float), lon + hop[:, 0], lat + hop[:, 1], (t + dur).astype(float))


def city_pair(spec: SyntheticCitySpec | None = None, seed: int = 0):
    """Source and target cities sharing the spec's rules but with disjoint layout seeds."""
    spec = spec or SyntheticCitySpec()
    return generate_city(spec, 2 * seed), generate_city(spec, 2 * seed + 1)
