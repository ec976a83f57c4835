"""Backend selection for the geometry kernels.

The compiled extension is used when importable. Set
``BIKEDEMAND_PURE_PYTHON=1`` to force the numpy implementations.
"""
import os

import numpy as np

from . import _kernels_py
from ._kernels_py import EARTH_RADIUS_M, haversine_m, haversine_matrix  # noqa: F401

if os.environ.get("BIKEDEMAND_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def locate_points(x, y, xedges, yedges):
    """Half-open bin lookup. Returns (row, col) int64 arrays; -1 marks outside."""
    return _impl.locate_points(_f64(x), _f64(y), _f64(xedges), _f64(yedges))


def road_cell_counts(x1, y1, x2, y2, level, n_levels, xedges, yedges):
    """Count segments of each level intersecting each half-open cell, shape (n, m, n_levels)."""
    level = np.ascontiguousarray(level, dtype=np.int64)
    return _impl.road_cell_counts(_f64(x1), _f64(y1), _f64(x2), _f64(y2), level,
                                  int(n_levels), _f64(xedges), _f64(yedges))


def nearest_haversine(qlon, qlat, plon, plat):
    """Distance to and index of the nearest point for every query; ties go to the lowest index.

    With no points, distances are ``inf`` and indices ``-1``.
    """
    return _impl.nearest_haversine(_f64(qlon), _f64(qlat), _f64(plon), _f64(plat))
