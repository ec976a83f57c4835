"""Single-level periodic DWT and daily-pattern mining."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .divergence import DEFAULT_EPS, kl_divergence, normalize
from .grid import InvalidInputError

DEFAULT_WAVELET = "db2"
DEFAULT_BETA = 0.11


@dataclass(frozen=True)
class WaveletFilters:
    name: str
    low_pass: tuple[float, ...]

    @property
    def high_pass(self) -> tuple[float, ...]:
        lo = self.low_pass
        L = len(lo)
        return tuple((-1) ** n * lo[L - 1 - n] for n in range(L))

    @property
    def taps(self) -> int:
        return len(self.low_pass)


_S3 = math.sqrt(3.0)
_R2 = math.sqrt(2.0)

WAVELETS = {
    "haar": WaveletFilters("haar", (1 / _R2, 1 / _R2)),
    "db2": WaveletFilters("db2", tuple(c / (4 * _R2) for c in (1 + _S3, 3 + _S3, 3 - _S3, 1 - _S3))),
    "db4": WaveletFilters("db4", (
        0.23037781330889650086, 0.71484657055291564709, 0.63088076792985890788,
        -0.027983769416859854211, -0.18703481171909308408, 0.030841381835560763627,
        0.032883011666885199735, -0.010597401785069032105,
    )),
}


def get_wavelet(name: str | WaveletFilters) -> WaveletFilters:
    if isinstance(name, WaveletFilters):
        return name
    try:
        return WAVELETS[name]
    except KeyError:
        raise InvalidInputError(f"unknown wavelet {name!r}; choose from {sorted(WAVELETS)}") from None


def _check_length(n: int, f: WaveletFilters):
    if n % 2:
        raise InvalidInputError(f"signal length must be even, got {n}")
    if n < f.taps:
        raise InvalidInputError(f"signal length {n} shorter than {f.taps} taps")


def dwt_level1(x, wavelet="db2") -> tuple[np.ndarray, np.ndarray]:
    """One analysis step along the last axis: ``y[n] = sum_j f[j] x[(2n - j) mod N]``.

    Returns (approx, detail), each half the input length.
    """
    f = get_wavelet(wavelet)
    x = np.asarray(x, dtype=float)
    N = x.shape[-1]
    _check_length(N, f)
    half = np.arange(N // 2)
    approx = np.zeros(x.shape[:-1] + (N // 2,))
    detail = np.zeros_like(approx)
    for j, (lo, hi) in enumerate(zip(f.low_pass, f.high_pass)):
        xs = x[..., (2 * half - j) % N]
        approx += lo * xs
        detail += hi * xs
    return approx, detail


def idwt_level1(approx, detail, wavelet="db2") -> np.ndarray:
    """Synthesis step; exact inverse of :func:`dwt_level1` for orthogonal filters."""
    f = get_wavelet(wavelet)
    approx = np.asarray(approx, dtype=float)
    detail = np.asarray(detail, dtype=float)
    if approx.shape != detail.shape:
        raise InvalidInputError("approx and detail bands differ in shape")
    N = 2 * approx.shape[-1]
    _check_length(N, f)
    half = np.arange(N // 2)
    out = np.zeros(approx.shape[:-1] + (N,))
    for j, (lo, hi) in enumerate(zip(f.low_pass, f.high_pass)):
        # (2n - j) mod N is a permutation of half the positions, so no index repeats
        out[..., (2 * half - j) % N] += lo * approx + hi * detail
    return out


def idwt_lowpass(approx, wavelet="db2") -> np.ndarray:
    """Reconstruction from the approximation band alone (detail band zeroed)."""
    approx = np.asarray(approx, dtype=float)
    return idwt_level1(approx, np.zeros_like(approx), wavelet)


@lru_cache(maxsize=32)
def _lowpass_matrix(name: str, half: int) -> np.ndarray:
    m = idwt_lowpass(np.eye(half), name)
    m.flags.writeable = False
    return m


def lowpass_matrix(wavelet, k: int) -> np.ndarray:
    """Matrix ``M`` of shape (k/2, k) with ``idwt_lowpass(a) == a @ M``."""
    f = get_wavelet(wavelet)
    if f.name not in WAVELETS:
        return idwt_lowpass(np.eye(k // 2), f)
    return _lowpass_matrix(f.name, k // 2)


def smooth(x, wavelet="db2") -> np.ndarray:
    """Low-pass profile: analysis, drop the detail band, synthesis."""
    approx, _ = dwt_level1(x, wavelet)
    return idwt_lowpass(approx, wavelet)


@dataclass
class MinedPattern:
    cell: tuple[int, int]
    pattern: np.ndarray
    support_days: int
    accepted: bool
    max_kl: float

    def to_json(self) -> dict:
        return {"pattern": [float(v) for v in self.pattern], "support_days": int(self.support_days),
                "accepted": bool(self.accepted), "max_kl": float(self.max_kl)}


class InsufficientDataError(InvalidInputError):
    pass


def mine_pattern(day_counts, wavelet="db2", beta: float = DEFAULT_BETA, eps: float = DEFAULT_EPS,
                 cell: tuple[int, int] = (0, 0)) -> MinedPattern:
    """Mine a daily demand pattern from one cell's per-day count vectors.

    Each day is normalized and low-pass smoothed; the smoothed profiles are
    averaged, negatives clamped, and the result renormalized. The pattern is
    accepted when its divergence to every normalized raw day is below ``beta``.
    """
    days = np.asarray(day_counts, dtype=float)
    if days.ndim != 2 or days.shape[0] < 2:
        raise InsufficientDataError("pattern mining needs at least two days")
    raw = normalize(days, eps)
    profile = smooth(raw, wavelet).mean(axis=0)
    pattern = normalize(np.maximum(profile, 0.0), eps)
    kls = kl_divergence(pattern[None, :], raw)
    max_kl = float(np.max(kls))
    return MinedPattern(cell, pattern, len(days), bool(max_kl < beta), max_kl)
