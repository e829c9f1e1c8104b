"""Gauss-Legendre rules on [0, 1] and tensor rules on rectangles."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def gauss_2d(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tensor n x n rule on the unit square: (xi, eta, weights), each of length n*n."""
    x, w = gauss_1d(n)
    xi, eta = np.meshgrid(x, x, indexing="ij")
    ww = np.outer(w, w)
    out = xi.ravel(), eta.ravel(), ww.ravel()
    for a in out:
        a.setflags(write=False)
    return out


def rect_points(x0, y0, x1, y1, n: int):
    """Map the n x n unit-square rule onto a batch of rectangles.

    Returns (X, Y, W) of shape (nrect, n*n); W already includes the area factor.
    """
    xi, eta, w = gauss_2d(n)
    x0 = np.asarray(x0, dtype=float)[:, None]
    y0 = np.asarray(y0, dtype=float)[:, None]
    hx = np.asarray(x1, dtype=float)[:, None] - x0
    hy = np.asarray(y1, dtype=float)[:, None] - y0
    return x0 + hx * xi, y0 + hy * eta, (hx * hy) * w
