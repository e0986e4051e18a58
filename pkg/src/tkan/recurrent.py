"""Recurrent cells: a linear-gate LSTM and the T-KAN cell with KAN gates.

Both cells read the concatenation ``z = [h_{t-1}, x_t]`` (hidden first, then
input; fixed everywhere, including checkpoints) and share the state update

    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)

Gate order inside stacked arrays is (i, f, g, o). Inputs may be a single
vector / sequence or a leading batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CacheError, ShapeError
from .kan import KanLayer, init_kan
from .numerics import RngState, sigmoid
from .splines import SplineGrid, basis_matrix


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class StepCache:
    cell_id: int
    z: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c_prev: np.ndarray
    tanh_c: np.ndarray
    basis: np.ndarray | None = None
    dbasis: np.ndarray | None = None


def state_update(i, f, g, o, c_prev):
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    return c, o * tanh_c, tanh_c


def _state_backward(cache: StepCache, dh, dc):
    """Back through the shared state algebra; returns gate pre-activation grads."""
    i, f, g, o = cache.i, cache.f, cache.g, cache.o
    d_o = dh * cache.tanh_c
    dc_total = dc + dh * o * (1.0 - cache.tanh_c**2)
    da = np.concatenate(
        [
            dc_total * g * i * (1.0 - i),
            dc_total * cache.c_prev * f * (1.0 - f),
            dc_total * i * (1.0 - g**2),
            d_o * o * (1.0 - o),
        ],
        axis=1,
    )
    return da, dc_total * f


def _gates(pre, hidden):
    i = sigmoid(pre[:, :hidden])
    f = sigmoid(pre[:, hidden:2 * hidden])
    g = np.tanh(pre[:, 2 * hidden:3 * hidden])
    o = sigmoid(pre[:, 3 * hidden:])
    return i, f, g, o


class _Cell:
    input_dim: int
    hidden_dim: int

    def zero_state(self, batch: int | None = None) -> CellState:
        shape = (self.hidden_dim,) if batch is None else (batch, self.hidden_dim)
        return CellState(np.zeros(shape), np.zeros(shape))

    def _concat(self, x, prev: CellState):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ShapeError(f"expected input width {self.input_dim}, got {x.shape[-1]}")
        h = np.asarray(prev.h, dtype=np.float64)
        if h.shape[-1] != self.hidden_dim:
            raise ShapeError(f"expected hidden width {self.hidden_dim}, got {h.shape[-1]}")
        x2 = np.atleast_2d(x)
        h2 = np.broadcast_to(np.atleast_2d(h), (x2.shape[0], self.hidden_dim))
        c2 = np.broadcast_to(np.atleast_2d(prev.c), (x2.shape[0], self.hidden_dim))
        return np.concatenate([h2, x2], axis=1), c2, x.ndim == 1

    def step(self, x, prev: CellState):
        z, c_prev, squeeze = self._concat(x, prev)
        pre, basis, dbasis = self._preactivation(z)
        i, f, g, o = _gates(pre, self.hidden_dim)
        c, h, tanh_c = state_update(i, f, g, o, c_prev)
        cache = StepCache(id(self), z, i, f, g, o, np.array(c_prev), tanh_c, basis, dbasis)
        if squeeze:
            return CellState(h[0], c[0]), cache
        return CellState(h, c), cache

    def step_backward(self, cache: StepCache, dh, dc):
        """Returns ``(param_grads, dx, dh_prev, dc_prev)`` for one step."""
        if not isinstance(cache, StepCache) or cache.cell_id != id(self):
            raise CacheError("step cache does not belong to this cell")
        dh = np.atleast_2d(dh)
        dc = np.atleast_2d(dc)
        da, dc_prev = _state_backward(cache, dh, dc)
        grads, dz = self._preactivation_backward(cache, da)
        return grads, dz[:, self.hidden_dim:], dz[:, :self.hidden_dim], dc_prev


class LstmCell(_Cell):
    """Standard LSTM; ``weight`` stacks W_i, W_f, W_g, W_o row-wise."""

    def __init__(self, input_dim: int, hidden_dim: int, weight=None, bias=None):
        if input_dim < 1 or hidden_dim < 1:
            raise ShapeError("cell dims must be >= 1")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        shape = (4 * hidden_dim, hidden_dim + input_dim)
        self.weight = np.zeros(shape) if weight is None else np.array(weight, dtype=np.float64)
        self.bias = np.zeros(4 * hidden_dim) if bias is None else np.array(bias, dtype=np.float64)
        if self.weight.shape != shape or self.bias.shape != (4 * hidden_dim,):
            raise ShapeError("LSTM parameter shapes inconsistent with dims")

    def _block(self, arr, k):
        return arr[k * self.hidden_dim:(k + 1) * self.hidden_dim]

    W_i = property(lambda self: self._block(self.weight, 0))
    W_f = property(lambda self: self._block(self.weight, 1))
    W_g = property(lambda self: self._block(self.weight, 2))
    W_o = property(lambda self: self._block(self.weight, 3))
    b_i = property(lambda self: self._block(self.bias, 0))
    b_f = property(lambda self: self._block(self.bias, 1))
    b_g = property(lambda self: self._block(self.bias, 2))
    b_o = property(lambda self: self._block(self.bias, 3))

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def _preactivation(self, z):
        return z @ self.weight.T + self.bias, None, None

    def _preactivation_backward(self, cache, da):
        return [da.T @ cache.z, da.sum(axis=0)], da @ self.weight


class TkanCell(_Cell):
    """LSTM whose four gates are KAN layers over ``[h_{t-1}, x_t]``."""

    def __init__(self, input_dim: int, hidden_dim: int, gates: list[KanLayer]):
        if len(gates) != 4:
            raise ShapeError("TkanCell needs exactly four gate layers (i, f, g, o)")
        width = input_dim + hidden_dim
        grid = gates[0].grid
        for layer in gates:
            if layer.in_dim != width or layer.out_dim != hidden_dim:
                raise ShapeError(f"gate layers must map {width} -> {hidden_dim}")
            if layer.grid != grid:
                raise ShapeError("gate layers must share one spline grid")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.gate_i, self.gate_f, self.gate_g, self.gate_o = gates
        self.grid = grid

    @property
    def gates(self):
        return [self.gate_i, self.gate_f, self.gate_g, self.gate_o]

    def parameters(self):
        return [(f"gate_{n}.{k}", a) for n, layer in zip("ifgo", self.gates) for k, a in layer.parameters()]

    def kan_layers(self):
        return self.gates

    def _preactivation(self, z):
        basis, dbasis = basis_matrix(self.grid, z)
        pre = np.concatenate([layer._apply(z, basis) for layer in self.gates], axis=1)
        return pre, basis, dbasis

    def _preactivation_backward(self, cache, da):
        grads = []
        dz = np.zeros_like(cache.z)
        for k, layer in enumerate(self.gates):
            g, gz = layer._grads(cache.z, cache.basis, cache.dbasis, da[:, k * self.hidden_dim:(k + 1) * self.hidden_dim])
            grads.extend(g)
            dz += gz
        return grads, dz


def init_lstm(input_dim: int, hidden_dim: int, rng: RngState) -> LstmCell:
    bound = 1.0 / np.sqrt(hidden_dim)
    weight = rng.uniform(-bound, bound, size=(4 * hidden_dim, hidden_dim + input_dim))
    bias = np.zeros(4 * hidden_dim)
    bias[hidden_dim:2 * hidden_dim] = 1.0  # forget-gate bias
    return LstmCell(input_dim, hidden_dim, weight, bias)


def init_tkan_cell(input_dim: int, hidden_dim: int, grid: SplineGrid, rng: RngState) -> TkanCell:
    width = input_dim + hidden_dim
    return TkanCell(input_dim, hidden_dim, [init_kan(width, hidden_dim, grid, rng) for _ in range(4)])


def lstm_step(cell: LstmCell, x, prev: CellState):
    return cell.step(x, prev)


def tkan_step(cell: TkanCell, x, prev: CellState):
    return cell.step(x, prev)


@dataclass
class UnrollCache:
    cell_id: int
    steps: list[StepCache]
    squeeze: bool


def unroll(cell, sequence, init: CellState | None = None):
    """Run ``cell`` left to right over ``sequence`` (T, in) or (B, T, in).

    Returns the list of per-step states and a cache for :func:`bptt`.
    """
    seq = np.asarray(sequence, dtype=np.float64)
    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq[None]
    if seq.ndim != 3 or seq.shape[1] < 1:
        raise ShapeError("sequence must be non-empty with shape (T, in) or (B, T, in)")
    batch = seq.shape[0]
    state = cell.zero_state(batch) if init is None else CellState(
        np.broadcast_to(np.atleast_2d(init.h), (batch, cell.hidden_dim)).copy(),
        np.broadcast_to(np.atleast_2d(init.c), (batch, cell.hidden_dim)).copy(),
    )
    states, caches = [], []
    for t in range(seq.shape[1]):
        state, cache = cell.step(seq[:, t], state)
        states.append(CellState(state.h[0], state.c[0]) if squeeze else state)
        caches.append(cache)
    return states, UnrollCache(id(cell), caches, squeeze)


def bptt(cell, cache: UnrollCache, dh_seq, dc_final=None):
    """Reverse-mode pass through an unrolled sequence.

    ``dh_seq`` holds the upstream gradient on every ``h_t`` (shape (T, H) or
    (B, T, H)); ``dc_final`` is the upstream gradient on ``c_T``. Returns
    ``(param_grads, dx_seq, (dh_0, dc_0))``.
    """
    if not isinstance(cache, UnrollCache) or cache.cell_id != id(cell):
        raise CacheError("unroll cache does not belong to this cell")
    T = len(cache.steps)
    dh_seq = np.asarray(dh_seq, dtype=np.float64)
    if cache.squeeze:
        dh_seq = dh_seq[None]
    batch = cache.steps[0].z.shape[0]
    if dh_seq.shape != (batch, T, cell.hidden_dim):
        raise CacheError(f"upstream shape {dh_seq.shape} does not match unrolled sequence")
    dc = np.zeros((batch, cell.hidden_dim)) if dc_final is None else np.atleast_2d(np.asarray(dc_final, dtype=np.float64)).copy()
    dh_next = np.zeros((batch, cell.hidden_dim))
    total = None
    dx = np.zeros((batch, T, cell.input_dim))
    for t in range(T - 1, -1, -1):
        grads, dx_t, dh_next, dc = cell.step_backward(cache.steps[t], dh_seq[:, t] + dh_next, dc)
        dx[:, t] = dx_t
        total = grads if total is None else [a + b for a, b in zip(total, grads)]
    if cache.squeeze:
        return total, dx[0], (dh_next[0], dc[0])
    return total, dx, (dh_next, dc)
