"""Shared FFT, interpolation and quadrature helpers."""

from __future__ import annotations

import math
import os
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import map_coordinates

__all__ = [
    "fft_workers",
    "gauss_legendre",
    "composite_gauss",
    "periodic_interp",
    "loglog_slope",
]


def fft_workers() -> int:
    """Worker count for scipy.fft, capped by ``ANISO_HEAT_THREADS``."""
    raw = os.environ.get("ANISO_HEAT_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def rfftn(a: np.ndarray) -> np.ndarray:
    return sfft.rfftn(a, workers=fft_workers())


def irfftn(a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return sfft.irfftn(a, s=shape, workers=fft_workers())


@lru_cache(maxsize=64)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(int(n))
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_gauss(edges: np.ndarray, order: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on consecutive panels ``edges``."""
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre(order)
    lo, width = edges[:-1, None], np.diff(edges)[:, None]
    return (lo + width * x).ravel(), (width * w).ravel()


def periodic_interp(values: np.ndarray, half_width: float, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a periodic grid field.

    ``values`` lives on the nodes ``-L + j h`` along every axis; ``points``
    has shape (k, N) and must already lie in [-L, L].
    """
    n = values.shape[0]
    h = 2.0 * half_width / n
    idx = (np.asarray(points, dtype=float) + half_width) / h
    if values.ndim == 1:
        xp = np.arange(n + 1, dtype=float)
        fp = np.append(values, values[0])
        return np.interp(idx[:, 0], xp, fp)
    return map_coordinates(values, idx.T, order=1, mode="grid-wrap")


def loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def next_pow2(k: float) -> int:
    return 1 << max(0, math.ceil(math.log2(max(1.0, k))))
