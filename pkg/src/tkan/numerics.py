"""Dense-array helpers, seeded random streams and the finite-difference oracle.

Every differentiable piece of the package is validated against
:func:`finite_diff_grad`; :func:`grad_check` wraps the comparison and reports
the worst coordinate.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteError, RngError, ShapeError

# A "matrix" is a C-contiguous float64 ndarray; dims live on the array itself.
Matrix = np.ndarray
RngState = np.random.Generator

# Denominator floor for relative gradient error; below it the check is absolute.
GRAD_REL_FLOOR = 1e-3


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> Matrix:
    m = np.ascontiguousarray(data, dtype=np.float64)
    if rows is not None and cols is not None:
        if m.size != rows * cols:
            raise ShapeError(f"expected {rows}x{cols} = {rows * cols} values, got {m.size}")
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise ShapeError(f"matrix must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("matrix entries must be finite")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects two 2-D matrices")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def make_rng(seed: int, *stream: str | int) -> RngState:
    """Counter-based (Philox) generator for the named sub-stream of ``seed``.

    Streams are keyed by name, not by creation order, so adding a new
    consumer never shifts the draws seen by existing ones.
    """
    if seed < 0 or seed >= 2**64:
        raise RngError("seed must be a 64-bit unsigned integer")
    key = tuple(s if isinstance(s, int) else zlib.crc32(s.encode()) for s in stream)
    ss = np.random.SeedSequence(entropy=seed, spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def seeded_uniform(rng: RngState, lo: float, hi: float, n: int) -> np.ndarray:
    if not lo < hi:
        raise RngError(f"need lo < hi, got lo={lo}, hi={hi}")
    if n < 0:
        raise RngError("n must be non-negative")
    return rng.uniform(lo, hi, size=n)


def finite_diff_grad(f: Callable[[np.ndarray], float], params, step: float = 1e-6) -> np.ndarray:
    """Central differences ``(f(p + h e_i) - f(p - h e_i)) / 2h`` per coordinate."""
    if step <= 0:
        raise ValueError("step must be positive")
    p = np.array(params, dtype=np.float64).ravel()
    grad = np.empty_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + step
        fp = float(f(p.copy()))
        p[i] = orig - step
        fm = float(f(p.copy()))
        p[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f is not finite around coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * step)
    return grad


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter_index: int
    analytic_value: float
    numeric_value: float

    def passed(self, tol: float = 1e-5) -> bool:
        return self.max_relative_error < tol


def relative_errors(analytic, numeric, floor: float = GRAD_REL_FLOOR) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.shape != n.shape:
        raise ShapeError(f"gradient shapes differ: {a.shape} vs {n.shape}")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.abs(a - n) / denom


def grad_check(f, analytic, params, step: float = 1e-6, floor: float = GRAD_REL_FLOOR) -> GradCheckReport:
    numeric = finite_diff_grad(f, params, step)
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    err = relative_errors(analytic, numeric, floor)
    worst = int(np.argmax(err)) if err.size else 0
    return GradCheckReport(
        max_relative_error=float(err[worst]) if err.size else 0.0,
        worst_parameter_index=worst,
        analytic_value=float(analytic[worst]) if err.size else 0.0,
        numeric_value=float(numeric[worst]) if err.size else 0.0,
    )


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x):
    return x * sigmoid(x)


def silu_grad(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))
