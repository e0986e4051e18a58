"""Vectorised numpy implementation of the batched B-spline kernel.

Used when the compiled ``_bspline`` extension is unavailable or disabled via
``TKAN_PURE_PYTHON=1``. Must agree with the Cython version to round-off.
"""
import numpy as np


def basis_with_derivative(x, knots, order, intervals):
    """Dense basis values and x-derivatives for every point in ``x``.

    Points outside ``[lo, hi]`` are clamped to the nearest edge and the
    values extended linearly with the edge derivative, so each returned row
    already encodes the extrapolation. ``x == hi`` uses the last interior
    span.

    Returns
    -------
    values, derivs : ndarray, shape (len(x), intervals + order)
    """
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    t = np.ascontiguousarray(knots, dtype=np.float64)
    p, g = int(order), int(intervals)
    n = x.size
    nb = g + p
    lo, hi = t[p], t[p + g]
    xc = np.clip(x, lo, hi)
    span = np.clip(np.searchsorted(t, xc, side="right") - 1, p, p + g - 1)

    N = np.zeros((n, p + 1))
    N[:, 0] = 1.0
    left = np.zeros((n, p + 1))
    right = np.zeros((n, p + 1))
    prev = N[:, :1].copy()
    for j in range(1, p + 1):
        left[:, j] = xc - t[span + 1 - j]
        right[:, j] = t[span + j] - xc
        saved = np.zeros(n)
        for r in range(j):
            den = right[:, r + 1] + left[:, j - r]
            safe = np.where(den != 0.0, den, 1.0)
            temp = np.where(den != 0.0, N[:, r] / safe, 0.0)
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
        if j == p - 1:
            prev = N[:, :p].copy()

    # derivative of degree-p basis s-p+r from the degree-(p-1) values
    D = np.zeros((n, p + 1))
    for r in range(p + 1):
        gidx = span - p + r
        if r >= 1:
            den = t[gidx + p] - t[gidx]
            D[:, r] += np.where(den != 0.0, prev[:, r - 1] / np.where(den != 0.0, den, 1.0), 0.0)
        if r <= p - 1:
            den = t[gidx + p + 1] - t[gidx + 1]
            D[:, r] -= np.where(den != 0.0, prev[:, r] / np.where(den != 0.0, den, 1.0), 0.0)
    D *= p

    values = np.zeros((n, nb))
    derivs = np.zeros((n, nb))
    rows = np.arange(n)[:, None]
    cols = span[:, None] - p + np.arange(p + 1)[None, :]
    shift = (x - xc)[:, None]
    values[rows, cols] = N + shift * D
    derivs[rows, cols] = D
    return values, derivs
