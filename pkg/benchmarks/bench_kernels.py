"""Time the compiled geometry kernels against the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Both backends are called
on identical inputs and their outputs are checked for equality first.
"""
import argparse
import timeit

import numpy as np

from bikedemand import _kernels_py

try:
    from bikedemand import _kernels as _cy
except ImportError:
    _cy = None


def inputs(n_cells: int, n_points: int, n_roads: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    xedges = np.linspace(116.2, 116.44, n_cells + 1)
    yedges = np.linspace(39.8, 39.98, n_cells + 1)
    pts = rng.uniform([116.19, 39.79], [116.45, 39.99], (n_points, 2))
    seg = rng.uniform([116.19, 39.79, 116.19, 39.79], [116.45, 39.99, 116.45, 39.99], (n_roads, 4))
    seg[:, 2:] = seg[:, :2] + (seg[:, 2:] - seg[:, :2]) * 0.05
    level = rng.integers(1, 30, n_roads)
    cx = (xedges[:-1] + xedges[1:]) / 2
    cy = (yedges[:-1] + yedges[1:]) / 2
    qlon, qlat = (np.ascontiguousarray(a.ravel()) for a in np.meshgrid(cx, cy))
    return {
        "locate_points": (np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]), xedges, yedges),
        "road_cell_counts": (*(np.ascontiguousarray(seg[:, c]) for c in range(4)), level, 29, xedges, yedges),
        "nearest_haversine": (qlon, qlat, np.ascontiguousarray(pts[:500, 0]), np.ascontiguousarray(pts[:500, 1])),
    }


def _as_tuple(out):
    return out if isinstance(out, tuple) else (out,)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, default=20, help="grid side length")
    ap.add_argument("--points", type=int, default=200_000)
    ap.add_argument("--roads", type=int, default=2_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _cy is None:
        print("compiled kernels not available; build with: python3 setup.py build_ext --inplace")
    print(f"{'kernel':<20}{'numpy (ms)':>12}{'cython (ms)':>13}{'speedup':>9}")
    for name, a in inputs(args.cells, args.points, args.roads).items():
        py = getattr(_kernels_py, name)
        t_py = min(timeit.repeat(lambda: py(*a), number=1, repeat=args.repeat)) * 1000
        if _cy is None:
            print(f"{name:<20}{t_py:>12.1f}{'-':>13}{'-':>9}")
            continue
        cy = getattr(_cy, name)
        for u, v in zip(_as_tuple(py(*a)), _as_tuple(cy(*a))):
            assert np.array_equal(np.asarray(u), np.asarray(v)), name
        t_cy = min(timeit.repeat(lambda: cy(*a), number=1, repeat=args.repeat)) * 1000
        print(f"{name:<20}{t_py:>12.1f}{t_cy:>13.1f}{t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
