"""Normalization of demand vectors and KL-divergence utilities."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import DemandSet, InvalidInputError

DEFAULT_EPS = 1e-6


def normalize(counts, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Additively smoothed probability vectors along the last axis.

    An all-zero vector becomes the uniform distribution.
    """
    if not eps > 0:
        raise InvalidInputError(f"smoothing eps must be > 0, got {eps}")
    x = np.asarray(counts, dtype=float) + eps
    return x / x.sum(axis=-1, keepdims=True)


def kl_divergence(p, q) -> np.ndarray | float:
    """KL(p || q) with natural log along the last axis; inputs must be strictly positive."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape[-1] != q.shape[-1]:
        raise InvalidInputError(f"length mismatch: {p.shape[-1]} vs {q.shape[-1]}")
    out = np.sum(p * (np.log(p) - np.log(q)), axis=-1)
    return float(out) if out.ndim == 0 else out


def pairwise_kl(vectors) -> np.ndarray:
    """Matrix ``D[x, y] = KL(v_x || v_y)``; the diagonal is exactly zero."""
    v = np.asarray(vectors, dtype=float)
    logv = np.log(v)
    return np.sum(v[:, None, :] * (logv[:, None, :] - logv[None, :, :]), axis=-1)


def max_pairwise_divergence(vectors) -> float:
    """Largest KL(x || y) over ordered pairs of distinct positions x != y."""
    v = np.asarray(vectors, dtype=float)
    if v.ndim != 2 or v.shape[0] < 2:
        raise InvalidInputError("need at least two vectors")
    d = pairwise_kl(v)
    np.fill_diagonal(d, -np.inf)
    return float(d.max())


@dataclass
class DivergenceStats:
    cells: list[tuple[int, int]]
    divergences: np.ndarray  # aligned with ``cells``
    thresholds: np.ndarray
    fractions: np.ndarray  # fraction of cells with divergence < threshold
    skipped: int

    @property
    def sorted_divergences(self) -> np.ndarray:
        return np.sort(self.divergences)


def divergence_histogram(demands: DemandSet, thresholds: Sequence[float] = (0.03, 0.11),
                         eps: float = DEFAULT_EPS, min_total: int = 1) -> DivergenceStats:
    """Per-cell max day-to-day divergence and its cumulative distribution.

    A cell's days are those with at least ``min_total`` rides; cells with
    fewer than two such days are skipped and counted.
    """
    cells, divs, skipped = [], [], 0
    for i, j in demands.grid.cell_labels():
        _, c = demands.cell_days(i, j, min_total)
        if len(c) < 2:
            skipped += 1
            continue
        cells.append((i, j))
        divs.append(max_pairwise_divergence(normalize(c, eps)))
    divs = np.asarray(divs, dtype=float)
    thr = np.asarray(thresholds, dtype=float)
    if len(divs):
        fractions = np.searchsorted(np.sort(divs), thr, side="left") / len(divs)
    else:
        fractions = np.zeros_like(thr)
    return DivergenceStats(cells, divs, thr, fractions, skipped)
