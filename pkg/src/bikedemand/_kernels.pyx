# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled geometry kernels.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature and bit-identical results; ``bikedemand.kernels`` picks one at
import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, atan2, sqrt, INFINITY

cnp.import_array()

cdef double EARTH_RADIUS_M = 6371000.0
cdef double DEG2RAD = 3.141592653589793 / 180.0


cdef inline double _haversine(double lon1, double lat1, double lon2, double lat2) noexcept nogil:
    cdef double phi1 = lat1 * DEG2RAD
    cdef double phi2 = lat2 * DEG2RAD
    cdef double sdphi = sin((lat2 - lat1) * DEG2RAD / 2.0)
    cdef double sdlmb = sin((lon2 - lon1) * DEG2RAD / 2.0)
    cdef double a = sdphi * sdphi + cos(phi1) * cos(phi2) * (sdlmb * sdlmb)
    if a > 1.0:
        a = 1.0
    return 2.0 * EARTH_RADIUS_M * atan2(sqrt(a), sqrt(1.0 - a))


cdef inline Py_ssize_t _bin(const double[::1] edges, double x) noexcept nogil:
    # number of edges <= x, minus one; -1 when outside [edges[0], edges[-1])
    cdef Py_ssize_t lo = 0, hi = edges.shape[0], mid
    if not (x >= edges[0] and x < edges[edges.shape[0] - 1]):
        return -1
    while lo < hi:
        mid = (lo + hi) >> 1
        if edges[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo - 1


def locate_points(const double[::1] x, const double[::1] y,
                  const double[::1] xedges, const double[::1] yedges):
    cdef Py_ssize_t n = x.shape[0], t, r, c
    row_arr = np.empty(n, dtype=np.int64)
    col_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] row = row_arr
    cdef cnp.int64_t[::1] col = col_arr
    with nogil:
        for t in range(n):
            c = _bin(xedges, x[t])
            r = _bin(yedges, y[t])
            if c < 0 or r < 0:
                row[t] = -1
                col[t] = -1
            else:
                row[t] = r
                col[t] = c
    return row_arr, col_arr


cdef inline bint _hits(double x1, double y1, double x2, double y2,
                       double xmin, double xmax, double ymin, double ymax) noexcept nogil:
    cdef double dx = x2 - x1, dy = y2 - y1
    cdef double t0 = 0.0, t1 = 1.0, r, tm, mx, my
    cdef double p[4]
    cdef double q[4]
    cdef int s
    p[0] = -dx; q[0] = x1 - xmin
    p[1] = dx;  q[1] = xmax - x1
    p[2] = -dy; q[2] = y1 - ymin
    p[3] = dy;  q[3] = ymax - y1
    for s in range(4):
        if p[s] == 0.0:
            if q[s] < 0.0:
                return False
        else:
            r = q[s] / p[s]
            if p[s] < 0.0:
                if r > t0:
                    t0 = r
            else:
                if r < t1:
                    t1 = r
    if t0 > t1:
        return False
    # the clipped piece must reach into the half-open cell, not only its upper edges
    tm = (t0 + t1) / 2.0
    mx = x1 + tm * dx
    my = y1 + tm * dy
    return mx < xmax and my < ymax


def road_cell_counts(const double[::1] x1, const double[::1] y1,
                     const double[::1] x2, const double[::1] y2,
                     const cnp.int64_t[::1] level, Py_ssize_t n_levels,
                     const double[::1] xedges, const double[::1] yedges):
    cdef Py_ssize_t ns = x1.shape[0]
    cdef Py_ssize_t m = xedges.shape[0] - 1, n = yedges.shape[0] - 1
    out_arr = np.zeros((n, m, n_levels), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t s, r, c, c0, c1, r0, r1, lv
    cdef double lox, hix, loy, hiy
    with nogil:
        for s in range(ns):
            lv = level[s] - 1
            lox = x1[s] if x1[s] < x2[s] else x2[s]
            hix = x2[s] if x1[s] < x2[s] else x1[s]
            loy = y1[s] if y1[s] < y2[s] else y2[s]
            hiy = y2[s] if y1[s] < y2[s] else y1[s]
            if hix < xedges[0] or lox >= xedges[m] or hiy < yedges[0] or loy >= yedges[n]:
                continue
            c0 = _clamped_bin(xedges, lox, m)
            c1 = _clamped_bin(xedges, hix, m)
            r0 = _clamped_bin(yedges, loy, n)
            r1 = _clamped_bin(yedges, hiy, n)
            for r in range(r0, r1 + 1):
                for c in range(c0, c1 + 1):
                    if _hits(x1[s], y1[s], x2[s], y2[s],
                             xedges[c], xedges[c + 1], yedges[r], yedges[r + 1]):
                        out[r, c, lv] += 1
    return out_arr


cdef inline Py_ssize_t _clamped_bin(const double[::1] edges, double x, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = n + 1, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if edges[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    lo -= 1
    if lo < 0:
        return 0
    if lo > n - 1:
        return n - 1
    return lo


def nearest_haversine(const double[::1] qlon, const double[::1] qlat,
                      const double[::1] plon, const double[::1] plat):
    cdef Py_ssize_t nq = qlon.shape[0], npt = plon.shape[0], a, b, best
    cdef double d, dmin
    dist_arr = np.empty(nq, dtype=np.float64)
    idx_arr = np.empty(nq, dtype=np.int64)
    cdef double[::1] dist = dist_arr
    cdef cnp.int64_t[::1] idx = idx_arr
    with nogil:
        for a in range(nq):
            dmin = INFINITY
            best = -1
            for b in range(npt):
                d = _haversine(qlon[a], qlat[a], plon[b], plat[b])
                if d < dmin:
                    dmin = d
                    best = b
            dist[a] = dmin
            idx[a] = best
    return dist_arr, idx_arr
