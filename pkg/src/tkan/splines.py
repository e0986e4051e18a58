"""Knot grids and B-spline bases evaluated with the Cox-de Boor recursion.

Conventions
-----------
* A grid of ``order`` p with ``intervals`` G carries ``G + 1 + 2p`` knots:
  the ``G + 1`` domain breakpoints plus p extra knots on each side.
  There are ``G + p`` basis functions.
* Order-0 pieces are half-open ``[t_i, t_{i+1})``; the upper domain edge is
  mapped into the last interior interval so the basis sums to one there.
* Recursion terms whose knot-span denominator is zero contribute 0.
* :func:`eval_spline` clamps out-of-domain inputs to the edge and continues
  linearly with the edge slope, so z-scored tails keep a gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import GridError

DEFAULT_ORDER = 3
DEFAULT_INTERVALS = 5
DEFAULT_DOMAIN = (-3.0, 3.0)


@dataclass(frozen=True, eq=False)
class SplineGrid:
    order: int
    interior_intervals: int
    domain_lo: float
    domain_hi: float
    knots: np.ndarray

    def __post_init__(self):
        knots = np.array(self.knots, dtype=np.float64)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        p, g = self.order, self.interior_intervals
        if p < 1 or g < 1:
            raise GridError("order and interior_intervals must be >= 1")
        if knots.shape != (g + 1 + 2 * p,):
            raise GridError(f"expected {g + 1 + 2 * p} knots, got {knots.size}")
        if np.any(np.diff(knots) < 0) or not np.all(np.isfinite(knots)):
            raise GridError("knots must be finite and non-decreasing")
        if not self.domain_lo < self.domain_hi:
            raise GridError("domain_lo must be < domain_hi")
        if knots[p] != self.domain_lo or knots[p + g] != self.domain_hi:
            raise GridError("domain bounds must coincide with knots[order] and knots[order + G]")

    @property
    def basis_count(self) -> int:
        return self.interior_intervals + self.order

    def spec(self) -> tuple[int, int, float, float]:
        return self.order, self.interior_intervals, self.domain_lo, self.domain_hi

    def __eq__(self, other):
        if not isinstance(other, SplineGrid):
            return NotImplemented
        return self.spec() == other.spec() and np.array_equal(self.knots, other.knots)

    __hash__ = object.__hash__


def make_uniform_grid(order: int = DEFAULT_ORDER, intervals: int = DEFAULT_INTERVALS,
                      lo: float = DEFAULT_DOMAIN[0], hi: float = DEFAULT_DOMAIN[1]) -> SplineGrid:
    if order < 1 or intervals < 1:
        raise GridError("order and intervals must be >= 1")
    if not lo < hi:
        raise GridError(f"need lo < hi, got [{lo}, {hi}]")
    h = (hi - lo) / intervals
    knots = lo + h * np.arange(-order, intervals + order + 1, dtype=np.float64)
    # pin the domain edges exactly despite round-off in lo + h*k
    knots[order] = lo
    knots[order + intervals] = hi
    return SplineGrid(order, intervals, float(lo), float(hi), knots)


def make_grid(order: int, knots) -> SplineGrid:
    """Grid over arbitrary (possibly non-uniform) knots."""
    knots = np.asarray(knots, dtype=np.float64)
    g = knots.size - 1 - 2 * order
    if order < 1 or g < 1:
        raise GridError(f"{knots.size} knots cannot carry an order-{order} grid")
    return SplineGrid(order, g, float(knots[order]), float(knots[order + g]), knots)


def _span_index(grid: SplineGrid, x: float) -> int | None:
    """Knot interval holding x, honouring the top-edge convention."""
    t = grid.knots
    if x == grid.domain_hi:
        return grid.order + grid.interior_intervals - 1
    if x < t[0] or x >= t[-1]:
        return None
    return int(np.searchsorted(t, x, side="right") - 1)


def basis_order0(grid: SplineGrid, i: int, x: float) -> float:
    if not 0 <= i < grid.knots.size - 1:
        raise GridError(f"knot interval index {i} out of range")
    return 1.0 if _span_index(grid, x) == i else 0.0


def _basis_table(grid: SplineGrid, k: int, x: float) -> np.ndarray:
    """All B_{i,k}(x) for i = 0 .. len(knots) - k - 2, built bottom-up."""
    t = grid.knots
    m = t.size
    b = np.zeros(m - 1)
    s = _span_index(grid, x)
    if s is not None:
        b[s] = 1.0
    for d in range(1, k + 1):
        nxt = np.zeros(m - 1 - d)
        for i in range(m - 1 - d):
            acc = 0.0
            den = t[i + d] - t[i]
            if den != 0.0 and b[i] != 0.0:
                acc += (x - t[i]) / den * b[i]
            den = t[i + d + 1] - t[i + 1]
            if den != 0.0 and b[i + 1] != 0.0:
                acc += (t[i + d + 1] - x) / den * b[i + 1]
            nxt[i] = acc
        b = nxt
    return b


def _check_index(grid: SplineGrid, i: int, k: int):
    if not 0 <= k <= grid.order:
        raise GridError(f"degree {k} outside 0..{grid.order}")
    if not 0 <= i < grid.knots.size - k - 1:
        raise GridError(f"basis index {i} out of range for degree {k}")


def basis(grid: SplineGrid, i: int, k: int, x: float) -> float:
    _check_index(grid, i, k)
    return float(_basis_table(grid, k, float(x))[i])


def basis_derivative(grid: SplineGrid, i: int, k: int, x: float) -> float:
    if k == 0:
        raise GridError("derivative of an order-0 basis is a distribution; k must be >= 1")
    _check_index(grid, i, k)
    t = grid.knots
    low = _basis_table(grid, k - 1, float(x))
    out = 0.0
    den = t[i + k] - t[i]
    if den != 0.0:
        out += low[i] / den
    den = t[i + k + 1] - t[i + 1]
    if den != 0.0:
        out -= low[i + 1] / den
    return k * out


def basis_matrix(grid: SplineGrid, x) -> tuple[np.ndarray, np.ndarray]:
    """Extrapolated basis rows and their x-derivatives for a batch of points.

    Shapes follow ``x`` with a trailing ``basis_count`` axis.
    """
    x = np.asarray(x, dtype=np.float64)
    vals, ders = kernels.basis_with_derivative(x.ravel(), grid.knots, grid.order, grid.interior_intervals)
    shape = x.shape + (grid.basis_count,)
    return vals.reshape(shape), ders.reshape(shape)


@dataclass
class SplineFunction:
    grid: SplineGrid
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.float64)
        if c.shape != (self.grid.basis_count,):
            raise GridError(f"need {self.grid.basis_count} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise GridError("coefficients must be finite")
        self.coefficients = c

    def __call__(self, x):
        return eval_spline(self, x)


def eval_spline(f: SplineFunction, x):
    vals, _ = basis_matrix(f.grid, x)
    out = vals @ f.coefficients
    return float(out) if np.ndim(x) == 0 else out


def eval_spline_derivative(f: SplineFunction, x):
    _, ders = basis_matrix(f.grid, x)
    out = ders @ f.coefficients
    return float(out) if np.ndim(x) == 0 else out
