"""Numpy implementations of the geometry kernels.

Same signatures and bit-identical results as the compiled ``_kernels``
module. Used when the extension is not built, or when
``BIKEDEMAND_PURE_PYTHON=1`` is set.
"""
import math

import numpy as np

EARTH_RADIUS_M = 6371000.0
DEG2RAD = math.pi / 180.0

# numpy's vectorized sin/cos/arctan2 may differ from libm in the last ulp;
# candidates within this slack of the vectorized minimum are re-scored with libm
_TIE_REL = 1e-12
_TIE_ABS = 1e-9


def haversine_m(lon1, lat1, lon2, lat2):
    """Great-circle distance in meters between two lon/lat points (scalar, libm)."""
    phi1 = lat1 * DEG2RAD
    phi2 = lat2 * DEG2RAD
    sdphi = math.sin((lat2 - lat1) * DEG2RAD / 2.0)
    sdlmb = math.sin((lon2 - lon1) * DEG2RAD / 2.0)
    a = sdphi * sdphi + math.cos(phi1) * math.cos(phi2) * (sdlmb * sdlmb)
    if a > 1.0:
        a = 1.0
    return 2.0 * EARTH_RADIUS_M * math.atan2(math.sqrt(a), math.sqrt(1.0 - a))


def haversine_matrix(qlon, qlat, plon, plat):
    """Vectorized haversine distances, shape (len(q), len(p))."""
    qlon = np.asarray(qlon, dtype=float)[:, None]
    qlat = np.asarray(qlat, dtype=float)[:, None]
    plon = np.asarray(plon, dtype=float)[None, :]
    plat = np.asarray(plat, dtype=float)[None, :]
    sdphi = np.sin((plat - qlat) * DEG2RAD / 2.0)
    sdlmb = np.sin((plon - qlon) * DEG2RAD / 2.0)
    a = sdphi * sdphi + np.cos(qlat * DEG2RAD) * np.cos(plat * DEG2RAD) * (sdlmb * sdlmb)
    a = np.minimum(a, 1.0)
    return 2.0 * EARTH_RADIUS_M * np.arctan2(np.sqrt(a), np.sqrt(1.0 - a))


def _bins(edges, x):
    idx = np.searchsorted(edges, x, side="right") - 1
    inside = (x >= edges[0]) & (x < edges[-1])
    return np.where(inside, idx, -1)


def locate_points(x, y, xedges, yedges):
    col = _bins(xedges, x)
    row = _bins(yedges, y)
    outside = (col < 0) | (row < 0)
    row = np.where(outside, -1, row).astype(np.int64)
    col = np.where(outside, -1, col).astype(np.int64)
    return row, col


def _hits(x1, y1, x2, y2, xmin, xmax, ymin, ymax):
    # Liang-Barsky over broadcast arrays, same operation order as the compiled kernel
    dx = x2 - x1
    dy = y2 - y1
    t0 = np.zeros(np.broadcast(x1, xmin).shape)
    t1 = np.ones_like(t0)
    ok = np.ones(t0.shape, dtype=bool)
    for p, q in ((-dx, x1 - xmin), (dx, xmax - x1), (-dy, y1 - ymin), (dy, ymax - y1)):
        p, q = np.broadcast_arrays(p, q)
        zero = p == 0.0
        ok &= ~(zero & (q < 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(zero, 0.0, q / np.where(zero, 1.0, p))
        lower = ~zero & (p < 0.0) & (r > t0)
        upper = ~zero & (p > 0.0) & (r < t1)
        t0 = np.where(lower, r, t0)
        t1 = np.where(upper, r, t1)
    ok &= ~(t0 > t1)
    tm = (t0 + t1) / 2.0
    mx = x1 + tm * dx
    my = y1 + tm * dy
    return ok & (mx < xmax) & (my < ymax)


def road_cell_counts(x1, y1, x2, y2, level, n_levels, xedges, yedges, chunk=4096):
    m = len(xedges) - 1
    n = len(yedges) - 1
    out = np.zeros((n, m, n_levels), dtype=np.int64)
    if len(x1) == 0:
        return out
    rows, cols = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    rows = rows.ravel()
    cols = cols.ravel()
    xmin = xedges[cols][None, :]
    xmax = xedges[cols + 1][None, :]
    ymin = yedges[rows][None, :]
    ymax = yedges[rows + 1][None, :]
    per_chunk = max(1, chunk * 64 // max(1, n * m))
    for start in range(0, len(x1), per_chunk):
        sl = slice(start, start + per_chunk)
        hit = _hits(x1[sl, None], y1[sl, None], x2[sl, None], y2[sl, None], xmin, xmax, ymin, ymax)
        seg, cell = np.nonzero(hit)
        np.add.at(out, (rows[cell], cols[cell], level[sl][seg] - 1), 1)
    return out


def nearest_haversine(qlon, qlat, plon, plat, chunk=2048):
    nq = len(qlon)
    dist = np.full(nq, np.inf)
    idx = np.full(nq, -1, dtype=np.int64)
    if len(plon) == 0:
        return dist, idx
    for start in range(0, nq, chunk):
        d = haversine_matrix(qlon[start:start + chunk], qlat[start:start + chunk], plon, plat)
        dmin = d.min(axis=1)
        near = d <= dmin[:, None] * (1.0 + _TIE_REL) + _TIE_ABS
        for a in range(d.shape[0]):
            q = start + a
            best, best_d = -1, math.inf
            for b in np.flatnonzero(near[a]):
                db = haversine_m(qlon[q], qlat[q], plon[b], plat[b])
                if db < best_d:
                    best, best_d = int(b), db
            dist[q] = best_d
            idx[q] = best
    return dist, idx
