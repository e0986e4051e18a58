"""KAN layers: every edge carries its own learnable univariate function.

Edge q <- p computes ``phi(x) = w_b * silu(x) + w_s * sum_i c_i B_i(x)`` and
output ``q`` is the sum of its incoming edges. All edges of a layer share one
spline grid, so the basis rows for an input coordinate are computed once and
reused by every output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CacheError, NonFiniteError, ShapeError
from .numerics import RngState, silu, silu_grad
from .splines import SplineFunction, SplineGrid, basis_matrix, eval_spline


@dataclass
class KanEdge:
    spline: SplineFunction
    base_weight: float
    spline_weight: float

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.base_weight * silu(np.atleast_1d(x)).reshape(x.shape) + self.spline_weight * eval_spline(self.spline, x)


@dataclass
class KanCache:
    layer_id: int
    x: np.ndarray
    basis: np.ndarray
    dbasis: np.ndarray
    squeeze: bool


class KanLayer:
    """Dense KAN layer ``in_dim -> out_dim``.

    Parameters are stored as arrays so whole-layer math is a couple of GEMMs:
    ``base_weight`` (out, in), ``spline_weight`` (out, in) and
    ``coefficients`` (out, in, basis_count).
    """

    def __init__(self, in_dim: int, out_dim: int, grid: SplineGrid,
                 base_weight=None, spline_weight=None, coefficients=None):
        if in_dim < 1 or out_dim < 1:
            raise ShapeError("layer dims must be >= 1")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.grid = grid
        nb = grid.basis_count
        self.base_weight = _param(base_weight, (out_dim, in_dim))
        self.spline_weight = _param(spline_weight, (out_dim, in_dim))
        self.coefficients = _param(coefficients, (out_dim, in_dim, nb))

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("base_weight", self.base_weight),
            ("spline_weight", self.spline_weight),
            ("coefficients", self.coefficients),
        ]

    @property
    def param_count(self) -> int:
        return sum(a.size for _, a in self.parameters())

    def edge(self, q: int, p: int) -> KanEdge:
        if not (0 <= q < self.out_dim and 0 <= p < self.in_dim):
            raise IndexError(f"edge ({q}, {p}) outside {self.out_dim}x{self.in_dim} layer")
        return KanEdge(
            SplineFunction(self.grid, self.coefficients[q, p].copy()),
            float(self.base_weight[q, p]),
            float(self.spline_weight[q, p]),
        )

    def forward(self, x):
        return kan_forward(self, x)

    def backward(self, cache, upstream):
        return kan_backward(self, cache, upstream)

    def l1(self) -> float:
        return l1_sparsity(self)

    # -- internals shared with cells that precompute the basis --------------

    def _apply(self, x, basis):
        b = x.shape[0]
        y = silu(x) @ self.base_weight.T
        w = (self.spline_weight[:, :, None] * self.coefficients).reshape(self.out_dim, -1)
        y += basis.reshape(b, -1) @ w.T
        return y

    def _grads(self, x, basis, dbasis, up):
        b = x.shape[0]
        nb = self.grid.basis_count
        flat_basis = basis.reshape(b, -1)
        g_w = (up.T @ flat_basis).reshape(self.out_dim, self.in_dim, nb)
        g_coef = g_w * self.spline_weight[:, :, None]
        g_ws = np.einsum("oin,oin->oi", g_w, self.coefficients)
        g_wb = up.T @ silu(x)
        w = (self.spline_weight[:, :, None] * self.coefficients).reshape(self.out_dim, -1)
        back = (up @ w).reshape(b, self.in_dim, nb)
        g_x = silu_grad(x) * (up @ self.base_weight) + np.einsum("bin,bin->bi", back, dbasis)
        return [g_wb, g_ws, g_coef], g_x


def _param(value, shape):
    if value is None:
        return np.zeros(shape)
    arr = np.array(value, dtype=np.float64)
    if arr.shape != shape:
        raise ShapeError(f"parameter shape {arr.shape} != {shape}")
    return arr


def _as_batch(x, in_dim):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != in_dim:
        raise ShapeError(f"expected input width {in_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("KAN input contains non-finite values")
    return x, squeeze


def kan_forward(layer: KanLayer, x):
    """Evaluate ``y_q = sum_p phi_{q,p}(x_p)``.

    ``x`` may be a single vector ``(in_dim,)`` or a batch ``(B, in_dim)``;
    the output follows the same convention.
    """
    xb, squeeze = _as_batch(x, layer.in_dim)
    basis, dbasis = basis_matrix(layer.grid, xb)
    y = layer._apply(xb, basis)
    cache = KanCache(id(layer), xb, basis, dbasis, squeeze)
    return (y[0] if squeeze else y), cache


def kan_backward(layer: KanLayer, cache: KanCache, upstream):
    """Gradients of ``sum(upstream * y)`` w.r.t. parameters and input.

    Returns ``(grads, grad_x)`` with ``grads`` ordered like
    :meth:`KanLayer.parameters`.
    """
    if not isinstance(cache, KanCache) or cache.layer_id != id(layer):
        raise CacheError("cache was not produced by this layer's forward pass")
    up = np.asarray(upstream, dtype=np.float64)
    if cache.squeeze:
        up = up[None, :]
    if up.shape != (cache.x.shape[0], layer.out_dim):
        raise CacheError(f"upstream shape {up.shape} does not match cached batch")
    grads, g_x = layer._grads(cache.x, cache.basis, cache.dbasis, up)
    return grads, (g_x[0] if cache.squeeze else g_x)


def l1_sparsity(layer: KanLayer) -> float:
    """Sum of |c_i| over every edge's spline coefficients (unscaled by lambda)."""
    return float(np.abs(layer.coefficients).sum())


def l1_subgradient(layer: KanLayer) -> list[np.ndarray]:
    # sign(0) = 0 keeps the update defined at the kink
    return [np.zeros_like(layer.base_weight), np.zeros_like(layer.spline_weight), np.sign(layer.coefficients)]


def init_kan(in_dim: int, out_dim: int, grid: SplineGrid, rng: RngState) -> KanLayer:
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    base = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    coef = rng.uniform(-0.1, 0.1, size=(out_dim, in_dim, grid.basis_count))
    return KanLayer(in_dim, out_dim, grid, base, np.ones((out_dim, in_dim)), coef)
