"""File formats: trip/city/feature CSVs, demand and pattern JSON, and atomic output staging."""
from __future__ import annotations

import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd

from .features import CityData, FeatureMatrix
from .grid import DemandSet, GridMap, InvalidInputError, TripTable

TRIP_COLUMNS = ["start_lon", "start_lat", "start_time", "end_lon", "end_lat", "end_time"]
CITY_FILES = {
    "poi": ("poi.csv", ["lon", "lat", "category"]),
    "roads": ("roads.csv", ["lon1", "lat1", "lon2", "lat2", "level"]),
    "light": ("light.csv", ["lon", "lat", "intensity"]),
    "light_centers": ("light_centers.csv", ["lon", "lat"]),
    "transport": ("transport.csv", ["lon", "lat"]),
    "business": ("business.csv", ["lon", "lat", "level"]),
}


class SchemaError(InvalidInputError):
    pass


def read_csv(path, columns) -> pd.DataFrame:
    """Read a CSV and check that every required column is present and numeric-parseable later."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: empty file, expected columns {columns}") from None
    df.columns = [c.strip() for c in df.columns]
    for c in columns:
        if c not in df.columns:
            raise SchemaError(f"{path}: missing column {c!r}")
    return df


def _numeric(df: pd.DataFrame, col: str, path) -> np.ndarray:
    try:
        vals = pd.to_numeric(df[col], errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError):
        raise SchemaError(f"{path}: column {col!r} has non-numeric values") from None
    if not np.all(np.isfinite(vals)):
        raise SchemaError(f"{path}: column {col!r} has missing or non-finite values")
    return vals


def parse_times(values: pd.Series, col: str = "time", path="") -> np.ndarray:
    """Epoch seconds from a column of epoch numbers or ISO-8601 strings (detected per column).

    ISO values without a zone are read as UTC.
    """
    num = pd.to_numeric(values, errors="coerce")
    if num.notna().all():
        return num.to_numpy(dtype=float)
    try:
        ts = pd.to_datetime(values, utc=True, format="ISO8601")
    except (ValueError, TypeError):
        raise SchemaError(f"{path}: column {col!r} is neither epoch seconds nor ISO-8601") from None
    if ts.isna().any():
        raise SchemaError(f"{path}: column {col!r} has missing timestamps")
    return (ts - pd.Timestamp(0, tz="UTC")).dt.total_seconds().to_numpy(dtype=float)


def read_trips(path) -> TripTable:
    df = read_csv(path, TRIP_COLUMNS)
    cols = {}
    for c in TRIP_COLUMNS:
        cols[c] = parse_times(df[c], c, path) if c.endswith("_time") else _numeric(df, c, path)
    table = TripTable(**cols)
    if np.any(table.end_time < table.start_time):
        bad = int(np.argmax(table.end_time < table.start_time))
        raise SchemaError(f"{path}: row {bad + 1} ends before it starts")
    return table


def trips_csv(table: TripTable) -> str:
    df = pd.DataFrame({c: getattr(table, c) for c in TRIP_COLUMNS})
    for c in ("start_time", "end_time"):
        df[c] = df[c].astype(np.int64)
    return df.to_csv(index=False, lineterminator="\n")


def read_city(directory) -> CityData:
    d = Path(directory)
    arrays = {}
    for key, (name, cols) in CITY_FILES.items():
        df = read_csv(d / name, cols)
        arrays[key] = np.column_stack([_numeric(df, c, d / name) for c in cols]) if len(df) else np.zeros((0, len(cols)))
    return CityData(**arrays)


def city_csvs(data: CityData) -> dict:
    out = {}
    for key, (name, cols) in CITY_FILES.items():
        df = pd.DataFrame(getattr(data, key), columns=cols)
        for c in ("category", "level"):
            if c in df:
                df[c] = df[c].astype(np.int64)
        out[name] = df.to_csv(index=False, lineterminator="\n")
    return out


def read_grid(path) -> GridMap:
    try:
        with open(path) as fh:
            return GridMap.from_dict(json.load(fh))
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise SchemaError(f"{path}: not a grid description ({e})") from None


def grid_json(grid: GridMap) -> str:
    return json.dumps(grid.to_dict(), sort_keys=True, indent=1)


def cell_key(cell) -> str:
    return f"{int(cell[0])},{int(cell[1])}"


def parse_cell_key(key: str, path="") -> tuple[int, int]:
    try:
        i, j = key.split(",")
        return int(i), int(j)
    except ValueError:
        raise SchemaError(f"{path}: bad cell key {key!r}, expected 'i,j'") from None


def demand_json(ds: DemandSet) -> str:
    """Demand set keyed by ``"i,j"``; only days with demand are listed per cell."""
    cells = {}
    for i, j in ds.grid.cell_labels():
        c = ds.counts[i - 1, j - 1]
        rows = [{"day": int(day), "counts": c[x].tolist()} for x, day in enumerate(ds.days) if c[x].sum() > 0]
        if rows:
            cells[f"{i},{j}"] = rows
    doc = {"grid": ds.grid.to_dict(), "k": ds.k, "days": [int(d) for d in ds.days],
           "outside": int(ds.outside), "cells": cells}
    return json.dumps(doc, sort_keys=True)


def read_demands(path) -> DemandSet:
    try:
        with open(path) as fh:
            doc = json.load(fh)
        grid = GridMap.from_dict(doc["grid"])
        k, days = int(doc["k"]), np.asarray(doc["days"], dtype=np.int64)
        cells = doc["cells"]
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise SchemaError(f"{path}: not a demand document ({e})") from None
    counts = np.zeros((grid.n, grid.m, len(days), k), dtype=np.int64)
    pos = {int(d): x for x, d in enumerate(days)}
    for key, rows in cells.items():
        i, j = parse_cell_key(key, path)
        if not (1 <= i <= grid.n and 1 <= j <= grid.m):
            raise SchemaError(f"{path}: cell {key} outside the {grid.n}x{grid.m} grid")
        for r in rows:
            if len(r["counts"]) != k or r["day"] not in pos:
                raise SchemaError(f"{path}: cell {key} has a malformed day entry")
            counts[i - 1, j - 1, pos[r["day"]]] = r["counts"]
    return DemandSet(grid, k, days, counts, int(doc.get("outside", 0)))


def patterns_json(patterns: dict) -> str:
    """``"i,j"`` -> {pattern, support_days, accepted, max_kl}; values may be MinedPattern or plain dicts."""
    doc = {}
    for cell in sorted(patterns):
        p = patterns[cell]
        doc[cell_key(cell)] = p.to_json() if hasattr(p, "to_json") else p
    return json.dumps(doc, sort_keys=True)


def read_patterns(path, with_meta: bool = False):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected an object keyed by 'i,j'")
    out, meta = {}, {}
    for key, v in doc.items():
        cell = parse_cell_key(key, path)
        try:
            p = np.asarray(v["pattern"], dtype=float)
        except (KeyError, TypeError, ValueError):
            raise SchemaError(f"{path}: cell {key} has no numeric 'pattern'") from None
        if p.ndim != 1 or not np.all(np.isfinite(p)):
            raise SchemaError(f"{path}: cell {key} pattern is not a finite vector")
        out[cell] = p
        meta[cell] = v
    return (out, meta) if with_meta else out


def features_csv(F: FeatureMatrix) -> str:
    labels = np.array(F.grid.cell_labels(), dtype=np.int64).reshape(-1, 2)
    df = pd.DataFrame(F.values, columns=F.columns)
    df.insert(0, "j", labels[:, 1])
    df.insert(0, "i", labels[:, 0])
    return df.to_csv(index=False, lineterminator="\n")


def read_features(path, grid: GridMap | None = None):
    """Return (cells, columns, values) from a feature or latent CSV with leading ``i,j`` columns."""
    df = read_csv(path, ["i", "j"])
    cols = [c for c in df.columns if c not in ("i", "j")]
    if not cols:
        raise SchemaError(f"{path}: no feature columns")
    cells = list(zip(_numeric(df, "i", path).astype(int), _numeric(df, "j", path).astype(int)))
    values = np.column_stack([_numeric(df, c, path) for c in cols])
    if grid is not None:
        expect = grid.cell_labels()
        if [tuple(c) for c in cells] != expect:
            raise SchemaError(f"{path}: rows must list all {grid.n}x{grid.m} cells in row-major order")
    return cells, cols, values


def matrix_csv(cells, columns, values) -> str:
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    df = pd.DataFrame(np.asarray(values, dtype=float), columns=list(columns))
    df.insert(0, "j", cells[:, 1])
    df.insert(0, "i", cells[:, 0])
    return df.to_csv(index=False, lineterminator="\n")


# ------------------------------------------------------------------ atomic output

class Stage:
    """Collects output files in a temp directory; they appear in place only on commit."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        self.names: list[str] = []

    def path(self, name: str) -> Path:
        p = self.tmp / name
        p.parent.mkdir(parents=True, exist_ok=True)
        if name not in self.names:
            self.names.append(name)
        return p

    def write_text(self, name: str, text: str):
        with open(self.path(name), "w", newline="") as fh:
            fh.write(text)

    def commit(self):
        for name in self.names:
            dest = self.out / name
            dest.parent.mkdir(parents=True, exist_ok=True)
            os.replace(self.tmp / name, dest)
        shutil.rmtree(self.tmp, ignore_errors=True)

    def abort(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


@contextmanager
def staged(out_dir):
    stage = Stage(out_dir)
    try:
        yield stage
    except BaseException:
        stage.abort()
        raise
    stage.commit()


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
