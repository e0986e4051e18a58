"""Complete forecasters emitting 3-class logits (0 = up, 1 = neutral, 2 = down).

Variants
--------
``tkan_head``
    Stacked LSTM encoder followed by a KAN classification head.
``tkan_gated``
    Stacked :class:`~tkan.recurrent.TkanCell` encoder with a linear head.
``deeplob_lite``
    Reduced DeepLOB baseline: a 1x2 stride-2 convolution pairing adjacent
    book columns, two causal 4x1 convolutions along time, then an LSTM and a
    linear head.

Every trainable array is listed once by :meth:`Forecaster.parameters`; the
flat gradient returned by :meth:`Forecaster.backward` uses the same order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import CacheError, ConfigError, ShapeError
from .kan import KanLayer, init_kan, l1_subgradient
from .numerics import make_rng
from .recurrent import LstmCell, TkanCell, bptt, init_lstm, init_tkan_cell, unroll
from .splines import make_uniform_grid

VARIANTS = ("tkan_head", "tkan_gated", "deeplob_lite")
LEAKY_SLOPE = 0.01


@dataclass
class ModelConfig:
    variant: str = "tkan_head"
    input_dim: int = 144
    window: int = 10
    hidden_dim: int = 64
    encoder_layers: int = 2
    head_hidden: int = 16
    head_layers: int = 2
    head_input: str = "last"  # "last" -> h_T of top layer; "concat" -> [h_T..., c_T...]
    grid_order: int = 3
    grid_intervals: int = 5
    grid_lo: float = -3.0
    grid_hi: float = 3.0
    conv_channels: int = 4
    class_count: int = 3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        for name in ("input_dim", "window", "hidden_dim", "encoder_layers", "head_hidden",
                     "grid_order", "grid_intervals", "conv_channels"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.head_layers not in (1, 2):
            raise ConfigError("head_layers must be 1 or 2")
        if self.head_input not in ("last", "concat"):
            raise ConfigError("head_input must be 'last' or 'concat'")
        if self.class_count != 3:
            raise ConfigError("class_count is fixed at 3")
        if not self.grid_lo < self.grid_hi:
            raise ConfigError("grid_lo must be < grid_hi")
        if self.variant == "deeplob_lite" and self.input_dim % 2:
            raise ConfigError("deeplob_lite pairs adjacent columns; input_dim must be even")

    @property
    def head_in_dim(self) -> int:
        if self.head_input == "concat":
            return 2 * self.encoder_layers * self.hidden_dim
        return self.hidden_dim

    def grid(self):
        return make_uniform_grid(self.grid_order, self.grid_intervals, self.grid_lo, self.grid_hi)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _leaky(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _leaky_grad(x):
    return np.where(x > 0, 1.0, LEAKY_SLOPE)


class Linear:
    def __init__(self, in_dim: int, out_dim: int, weight=None, bias=None):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = np.zeros((out_dim, in_dim)) if weight is None else np.array(weight, dtype=np.float64)
        self.bias = np.zeros(out_dim) if bias is None else np.array(bias, dtype=np.float64)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x):
        return x @ self.weight.T + self.bias

    def backward(self, x, up):
        return [up.T @ x, up.sum(axis=0)], up @ self.weight


class ConvKernel:
    """2-D convolution over a (time, column) map with channels last.

    ``height`` runs along time, ``width`` along book columns. Width kernels
    stride by their own width (non-overlapping pairs); height kernels are
    causal, left-padded with zeros so row t only sees rows <= t.
    """

    def __init__(self, height: int, width: int, in_channels: int, out_channels: int, weights=None, bias=None):
        if (height, width) not in ((1, 2), (4, 1)):
            raise ConfigError(f"unsupported kernel {height}x{width}; baseline uses 1x2 and 4x1")
        self.height, self.width = height, width
        self.in_channels, self.out_channels = in_channels, out_channels
        shape = (out_channels, in_channels, height, width)
        self.weights = np.zeros(shape) if weights is None else np.array(weights, dtype=np.float64)
        self.bias = np.zeros(out_channels) if bias is None else np.array(bias, dtype=np.float64)
        if self.weights.shape != shape or self.bias.shape != (out_channels,):
            raise ShapeError("conv parameter shapes inconsistent")

    def parameters(self):
        return [("weights", self.weights), ("bias", self.bias)]

    def _patches(self, x):
        # x: (B, T, W, C) -> (B, T_out, W_out, C, kh, kw)
        b, t, w, c = x.shape
        if self.width == 2:
            return x.reshape(b, t, w // 2, 2, c).transpose(0, 1, 2, 4, 3)[:, :, :, :, None, :]
        padded = np.concatenate([np.zeros((b, self.height - 1, w, c)), x], axis=1)
        stack = np.stack([padded[:, j:j + t] for j in range(self.height)], axis=-1)
        return stack[..., None]

    def forward(self, x):
        p = self._patches(x)
        return np.einsum("btwchk,ochk->btwo", p, self.weights) + self.bias, p

    def backward(self, x, patches, up):
        g_w = np.einsum("btwchk,btwo->ochk", patches, up)
        g_b = up.sum(axis=(0, 1, 2))
        g_p = np.einsum("btwo,ochk->btwchk", up, self.weights)
        b, t, w, c = x.shape
        if self.width == 2:
            g_x = g_p[:, :, :, :, 0, :].transpose(0, 1, 2, 4, 3).reshape(b, t, w, c)
        else:
            g_pad = np.zeros((b, t + self.height - 1, w, c))
            for j in range(self.height):
                g_pad[:, j:j + t] += g_p[..., j, 0]
            g_x = g_pad[:, self.height - 1:]
        return [g_w, g_b], g_x


class Forecaster:
    def __init__(self, config: ModelConfig, encoder, head, convs=()):
        self.config = config
        self.encoder = list(encoder)
        self.head = list(head)
        self.convs = list(convs)
        self._cache = None
        self._registry = self._build_registry()

    # -- registry -----------------------------------------------------------

    def _modules(self):
        mods = [(f"conv{k}", m) for k, m in enumerate(self.convs)]
        mods += [(f"encoder{k}", m) for k, m in enumerate(self.encoder)]
        mods += [(f"head{k}", m) for k, m in enumerate(self.head)]
        return mods

    def _build_registry(self):
        reg = []
        seen = set()
        for prefix, mod in self._modules():
            for name, arr in mod.parameters():
                if id(arr) in seen:
                    raise ConfigError(f"parameter {prefix}.{name} registered twice")
                seen.add(id(arr))
                reg.append((f"{prefix}.{name}", arr))
        return reg

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return list(self._registry)

    @property
    def param_count(self) -> int:
        return sum(a.size for _, a in self._registry)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self._registry])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.param_count,):
            raise ShapeError(f"expected {self.param_count} parameters, got {flat.shape}")
        off = 0
        for _, a in self._registry:
            a[...] = flat[off:off + a.size].reshape(a.shape)
            off += a.size

    def kan_layers(self) -> list[KanLayer]:
        layers = [m for m in self.head if isinstance(m, KanLayer)]
        for cell in self.encoder:
            if isinstance(cell, TkanCell):
                layers.extend(cell.gates)
        return layers

    def l1_penalty(self) -> float:
        return float(sum(np.abs(layer.coefficients).sum() for layer in self.kan_layers()))

    def l1_subgradient(self) -> list[np.ndarray]:
        """Subgradient of :meth:`l1_penalty` aligned with the registry."""
        by_id = {}
        for layer in self.kan_layers():
            for (_, arr), g in zip(layer.parameters(), l1_subgradient(layer)):
                by_id[id(arr)] = g
        return [by_id.get(id(a), np.zeros_like(a)) for _, a in self._registry]

    # -- forward / backward ---------------------------------------------------

    def _check_input(self, x):
        if hasattr(x, "X"):
            x = x.X
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        cfg = self.config
        if x.ndim != 3 or x.shape[1:] != (cfg.window, cfg.input_dim):
            raise ShapeError(f"expected samples of shape ({cfg.window}, {cfg.input_dim}), got {x.shape}")
        return x, squeeze

    def forward(self, sample):
        x, squeeze = self._check_input(sample)
        v = self.config.variant
        if v == "deeplob_lite":
            logits, cache = self._forward_deeplob(x)
        else:
            logits, cache = self._forward_recurrent(x)
        self._cache = (cache, x.shape[0], squeeze)
        return logits[0] if squeeze else logits

    __call__ = forward

    def predict_proba(self, x, batch_size: int = 512) -> np.ndarray:
        x, _ = self._check_input(x)
        out = []
        for s in range(0, x.shape[0], batch_size):
            logits = self.forward(x[s:s + batch_size])
            z = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(z)
            out.append(e / e.sum(axis=1, keepdims=True))
        self._cache = None
        return np.concatenate(out, axis=0) if out else np.zeros((0, 3))

    def predict(self, x, batch_size: int = 512) -> np.ndarray:
        return np.argmax(self.predict_proba(x, batch_size), axis=1)

    def _encode(self, seq):
        caches, finals = [], []
        for cell in self.encoder:
            states, cache = unroll(cell, seq)
            caches.append(cache)
            finals.append(states[-1])
            seq = np.stack([s.h for s in states], axis=1)
        return seq, caches, finals

    def _forward_recurrent(self, x):
        _, enc_caches, finals = self._encode(x)
        if self.config.head_input == "concat":
            feat = np.concatenate([s.h for s in finals] + [s.c for s in finals], axis=1)
        else:
            feat = finals[-1].h
        head_caches = []
        z = feat
        for layer in self.head:
            if isinstance(layer, KanLayer):
                z, c = layer.forward(z)
            else:
                c = z
                z = layer.forward(z)
            head_caches.append(c)
        return z, (enc_caches, head_caches)

    def _backward_head(self, up, head_caches):
        grads = []
        for layer, c in zip(reversed(self.head), reversed(head_caches)):
            if isinstance(layer, KanLayer):
                g, up = layer.backward(c, up)
            else:
                g, up = layer.backward(c, up)
            grads.append(g)
        return [a for g in reversed(grads) for a in g], up

    def _backward_encoder(self, enc_caches, dh_last, dc_last):
        """dh_last/dc_last: per-layer upstream on h_T and c_T (None = zero)."""
        grads = []
        dx_above = None
        for k in range(len(self.encoder) - 1, -1, -1):
            cell, cache = self.encoder[k], enc_caches[k]
            b, T = cache.steps[0].z.shape[0], len(cache.steps)
            dh_seq = np.zeros((b, T, cell.hidden_dim)) if dx_above is None else dx_above
            if dh_last[k] is not None:
                dh_seq[:, -1] += dh_last[k]
            g, dx_above, _ = bptt(cell, cache, dh_seq, dc_last[k])
            grads.append(g)
        return [a for g in reversed(grads) for a in g], dx_above

    def _forward_deeplob(self, x):
        maps = x[..., None]
        conv_caches = []
        for conv in self.convs:
            pre, patches = conv.forward(maps)
            conv_caches.append((maps, patches, pre))
            maps = _leaky(pre)
        b, t, w, c = maps.shape
        seq = maps.reshape(b, t, w * c)  # feature maps laid along the time axis
        _, enc_caches, finals = self._encode(seq)
        head = self.head[0]
        feat = finals[-1].h
        return head.forward(feat), (conv_caches, enc_caches, feat, maps.shape)

    def backward(self, upstream) -> np.ndarray:
        """Flat gradient of ``sum(upstream * logits)`` in registry order."""
        return np.concatenate([g.ravel() for g in self.backward_arrays(upstream)])

    def backward_arrays(self, upstream) -> list[np.ndarray]:
        if self._cache is None:
            raise CacheError("backward called without a preceding forward")
        cache, batch, squeeze = self._cache
        up = np.asarray(upstream, dtype=np.float64)
        if squeeze:
            up = up[None]
        if up.shape != (batch, 3):
            raise CacheError(f"upstream shape {up.shape} does not match cached batch of {batch}")
        L = len(self.encoder)
        if self.config.variant == "deeplob_lite":
            conv_caches, enc_caches, feat, map_shape = cache
            head_g, d_feat = self.head[0].backward(feat, up)
            enc_g, dseq = self._backward_encoder(enc_caches, [None] * (L - 1) + [d_feat], [None] * L)
            dmaps = dseq.reshape(map_shape)
            conv_g = []
            for conv, (inp, patches, pre) in zip(reversed(self.convs), reversed(conv_caches)):
                g, dmaps = conv.backward(inp, patches, dmaps * _leaky_grad(pre))
                conv_g.append(g)
            conv_flat = [a for g in reversed(conv_g) for a in g]
            return conv_flat + enc_g + head_g
        enc_caches, head_caches = cache
        head_g, d_feat = self._backward_head(up, head_caches)
        H = self.config.hidden_dim
        if self.config.head_input == "concat":
            dh = [d_feat[:, k * H:(k + 1) * H] for k in range(L)]
            dc = [d_feat[:, (L + k) * H:(L + k + 1) * H] for k in range(L)]
        else:
            dh = [None] * (L - 1) + [d_feat]
            dc = [None] * L
        enc_g, _ = self._backward_encoder(enc_caches, dh, dc)
        return enc_g + head_g


def build_model(config: ModelConfig, seed: int | None = 0) -> Forecaster:
    """Construct a forecaster; ``seed=None`` leaves every parameter at zero."""
    cfg = config
    grid = cfg.grid()
    zero = seed is None
    rng = (lambda name: make_rng(seed, "model", name)) if not zero else None
    H = cfg.hidden_dim
    convs = []
    if cfg.variant == "deeplob_lite":
        C = cfg.conv_channels
        convs = [ConvKernel(1, 2, 1, C), ConvKernel(4, 1, C, C), ConvKernel(4, 1, C, C)]
        if not zero:
            for k, conv in enumerate(convs):
                fan_in = conv.in_channels * conv.height * conv.width
                bound = np.sqrt(6.0 / fan_in)
                conv.weights[...] = rng(f"conv{k}").uniform(-bound, bound, conv.weights.shape)
        enc_in = (cfg.input_dim // 2) * C
        n_layers = 1
    else:
        enc_in = cfg.input_dim
        n_layers = cfg.encoder_layers
    encoder = []
    for k in range(n_layers):
        d_in = enc_in if k == 0 else H
        if cfg.variant == "tkan_gated":
            cell = init_tkan_cell(d_in, H, grid, rng(f"encoder{k}")) if not zero else TkanCell(
                d_in, H, [KanLayer(d_in + H, H, grid) for _ in range(4)])
        else:
            cell = init_lstm(d_in, H, rng(f"encoder{k}")) if not zero else LstmCell(d_in, H)
        encoder.append(cell)
    if cfg.variant == "tkan_head":
        widths = [cfg.head_in_dim] + ([cfg.head_hidden] if cfg.head_layers == 2 else []) + [3]
        head = []
        for k, (a, b) in enumerate(zip(widths, widths[1:])):
            head.append(init_kan(a, b, grid, rng(f"head{k}")) if not zero else KanLayer(a, b, grid))
    else:
        lin = Linear(H, 3)
        if not zero:
            bound = np.sqrt(6.0 / (H + 3))
            lin.weight[...] = rng("head0").uniform(-bound, bound, lin.weight.shape)
        head = [lin]
    return Forecaster(cfg, encoder, head, convs)


def param_count(config: ModelConfig) -> int:
    return build_model(config, seed=None).param_count
