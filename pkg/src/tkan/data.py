"""FI-2010-style ingestion, normalisation, sliding windows and synthetic books.

Row conventions: a snapshot row holds 144 features in FI-2010 order, the
first 40 being ten levels of (ask price, ask volume, bid price, bid volume).
Labels are stored 0 = up, 1 = neutral, 2 = down for the horizons in
:data:`HORIZONS`; the dataset's own {1, 2, 3} coding is remapped on load.
"""
from __future__ import annotations

import re
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DataError,
    EmptyDataError,
    FieldCountError,
    InsufficientDataError,
    MissingHorizonError,
    ParseError,
)
from .numerics import RngState

N_FEATURES = 144
HORIZONS = (10, 20, 30, 50, 100)
N_FIELDS = N_FEATURES + len(HORIZONS)
LAYOUTS = ("rows_are_samples", "rows_are_features")

_SPLIT = re.compile(r"[,\s]+")


@dataclass
class LobSnapshot:
    features: np.ndarray
    timestamp: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.shape != (N_FEATURES,):
            raise DataError(f"snapshot needs {N_FEATURES} features, got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise DataError("snapshot features must be finite")

    @property
    def mid(self) -> float:
        return 0.5 * (self.features[0] + self.features[2])


# -- loading -------------------------------------------------------------------


def _parse_rows(text: str) -> list[tuple[int, list[float]]]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip().strip(",")
        if not stripped:
            continue
        values = []
        for col, tok in enumerate(_SPLIT.split(stripped), start=1):
            try:
                v = float(tok)
            except ValueError:
                raise ParseError(f"line {lineno}, column {col}: non-numeric token {tok[:20]!r}",
                                 line=lineno, column=col) from None
            if not np.isfinite(v):
                raise ParseError(f"line {lineno}, column {col}: non-finite value", line=lineno, column=col)
            values.append(v)
        rows.append((lineno, values))
    return rows


def parse_fi2010(text: str, layout: str = "rows_are_samples"):
    if layout not in LAYOUTS:
        raise DataError(f"unknown layout {layout!r}; choose from {LAYOUTS}")
    rows = _parse_rows(text)
    if not rows:
        raise EmptyDataError("no numeric data found")
    if layout == "rows_are_samples":
        for k, (lineno, vals) in enumerate(rows):
            if len(vals) != N_FIELDS:
                raise FieldCountError(
                    f"sample {k} (line {lineno}) has {len(vals)} fields, expected {N_FIELDS}", sample=k)
        mat = np.array([v for _, v in rows], dtype=np.float64)
    else:
        if len(rows) != N_FIELDS:
            raise FieldCountError(
                f"feature-major file has {len(rows)} rows, expected {N_FIELDS} (one per field)")
        widths = [len(v) for _, v in rows]
        n = min(widths)
        if max(widths) != n:
            bad = next(i for i, (_, v) in enumerate(rows) if len(v) != max(widths))
            raise FieldCountError(f"sample {n} is missing field {bad} (rows have unequal lengths)", sample=n)
        mat = np.array([v for _, v in rows], dtype=np.float64).T
    raw = mat[:, N_FEATURES:]
    bad = ~np.isin(raw, (1.0, 2.0, 3.0))
    if bad.any():
        s, c = np.argwhere(bad)[0]
        raise ParseError(f"sample {s}: label {raw[s, c]!r} for horizon {HORIZONS[c]} not in {{1, 2, 3}}",
                         line=int(s) + 1, column=N_FEATURES + int(c) + 1)
    return mat[:, :N_FEATURES].copy(), raw.astype(np.int64) - 1


def load_fi2010(path, layout: str = "rows_are_samples"):
    """Read an FI-2010-format text file.

    Returns ``(features, labels)``: ``(N, 144)`` floats in time order and
    ``(N, 5)`` integer labels aligned with :data:`HORIZONS`.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    try:
        text = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 text (byte {exc.start})") from None
    return parse_fi2010(text, layout)


def write_fi2010(path, features, labels, layout: str = "rows_are_samples"):
    mat = np.hstack([np.asarray(features, dtype=np.float64), np.asarray(labels) + 1.0])
    if layout == "rows_are_features":
        mat = mat.T
    np.savetxt(path, mat, fmt="%.17g")


_CACHE_MAGIC = b"TKANDATA"


def write_cache(path, features, labels, horizons=HORIZONS):
    """Binary cache: magic, uint32 version/N/F/H, H horizons, then
    float64 features (N*F) and float64 labels (N*H), little-endian, CRC-32 last."""
    features = np.ascontiguousarray(features, dtype="<f8")
    labels = np.ascontiguousarray(labels, dtype="<f8")
    n, f = features.shape
    body = _CACHE_MAGIC + struct.pack("<IIII", 1, n, f, len(horizons))
    body += struct.pack(f"<{len(horizons)}I", *horizons) + features.tobytes() + labels.tobytes()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_cache(path):
    data = Path(path).read_bytes()
    if len(data) < 28 or data[:8] != _CACHE_MAGIC:
        raise ParseError(f"{path}: not a data cache")
    if zlib.crc32(data[:-4]) != struct.unpack_from("<I", data, len(data) - 4)[0]:
        raise ParseError(f"{path}: data cache checksum mismatch")
    version, n, f, h = struct.unpack_from("<IIII", data, 8)
    if version != 1:
        raise ParseError(f"{path}: unsupported cache version {version}")
    off = 24 + 4 * h
    feats = np.frombuffer(data, "<f8", n * f, off).reshape(n, f).astype(np.float64)
    labels = np.frombuffer(data, "<f8", n * h, off + 8 * n * f).reshape(n, h).astype(np.int64)
    return feats, labels


def mid_prices(features) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    return 0.5 * (f[:, 0] + f[:, 2])


# -- normalisation -------------------------------------------------------------


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def zscore_fit(features) -> NormStats:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError("need at least 2 snapshots to fit normalisation stats")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    flat = (np.ptp(x, axis=0) == 0) | (std <= 0)
    if flat.any():
        warnings.warn(f"{int(flat.sum())} zero-variance feature(s); using std = 1", RuntimeWarning, stacklevel=2)
        std = np.where(flat, 1.0, std)
    return NormStats(mean, std)


def zscore_apply(stats: NormStats, features) -> np.ndarray:
    return (np.asarray(features, dtype=np.float64) - stats.mean) / stats.std


# -- windows -------------------------------------------------------------------


@dataclass
class WindowSample:
    X: np.ndarray
    labels: dict[int, int]


@dataclass
class WindowSet:
    """Stride-1 windows over a snapshot series, stored as a zero-copy view.

    ``end_index[j]`` is the 0-based row of the last snapshot in window j;
    labels and forward returns for that window are read at that row.
    """

    X: np.ndarray
    labels: dict[int, np.ndarray]
    end_index: np.ndarray
    mids: np.ndarray | None = None
    window: int = field(default=0)

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return WindowSample(np.array(self.X[idx]), {k: int(v[idx]) for k, v in self.labels.items()})
        return WindowSet(self.X[idx], {k: v[idx] for k, v in self.labels.items()},
                         self.end_index[idx], self.mids, self.window)

    @property
    def horizons(self) -> tuple[int, ...]:
        return tuple(sorted(self.labels))

    def label(self, k: int) -> np.ndarray:
        if k not in self.labels:
            raise MissingHorizonError(f"no labels for horizon k={k}; have {self.horizons}")
        return self.labels[k]

    def forward_returns(self, k: int):
        """Realised k-step mid return per window and a mask of windows that have one."""
        if self.mids is None:
            raise MissingHorizonError("window set carries no mid-price series")
        n = self.mids.size
        ok = self.end_index + k < n
        ret = np.full(len(self), np.nan)
        e = self.end_index[ok]
        ret[ok] = (self.mids[e + k] - self.mids[e]) / self.mids[e]
        return ret, ok


def _label_dict(labels, horizons) -> dict[int, np.ndarray]:
    if isinstance(labels, dict):
        return {int(k): np.asarray(v, dtype=np.int64) for k, v in labels.items()}
    lab = np.asarray(labels, dtype=np.int64)
    if lab.ndim == 1:
        lab = lab[:, None]
    if lab.shape[1] != len(horizons):
        raise MissingHorizonError(f"{lab.shape[1]} label columns for {len(horizons)} horizons")
    return {k: lab[:, j] for j, k in enumerate(horizons)}


def make_windows(features, labels, T: int = 10, k: int | Iterable[int] | None = None,
                 mids=None, label_horizons=HORIZONS) -> WindowSet:
    """One window per end row t in [T, N] (1-based), stride 1.

    ``k`` selects which horizon labels to keep (default: all available).
    """
    feats = np.asarray(features, dtype=np.float64)
    if T < 1:
        raise InsufficientDataError("window length T must be >= 1")
    n = feats.shape[0]
    if n < T:
        raise InsufficientDataError(f"{n} snapshots cannot fill a window of {T}")
    all_labels = _label_dict(labels, label_horizons)
    if k is None:
        keep = sorted(all_labels)
    else:
        keep = [k] if isinstance(k, (int, np.integer)) else list(k)
    missing = [h for h in keep if h not in all_labels]
    if missing:
        raise MissingHorizonError(f"no label column for horizon(s) {missing}")
    X = sliding_window_view(feats, T, axis=0).transpose(0, 2, 1)
    end = np.arange(T - 1, n)
    labs = {h: all_labels[h][T - 1:] for h in keep}
    m = None if mids is None else np.asarray(mids, dtype=np.float64)
    return WindowSet(X, labs, end, m, T)


def split_windows(windows: WindowSet, train_fraction: float = 0.8):
    """Contiguous prefix/suffix split; never shuffled."""
    if not 0 < train_fraction < 1:
        raise DataError("train_fraction must lie in (0, 1)")
    cut = int(round(len(windows) * train_fraction))
    if cut < 1 or cut >= len(windows):
        raise InsufficientDataError("split leaves an empty partition")
    return windows[:cut], windows[cut:]


@dataclass
class ClassDistribution:
    counts: np.ndarray
    total: int

    def share(self, c: int) -> float:
        return float(self.counts[c]) / self.total

    @property
    def neutral_share(self) -> float:
        return self.share(1)


def class_distribution(samples, k: int | None = None) -> ClassDistribution:
    if isinstance(samples, WindowSet):
        y = samples.label(k)
    elif isinstance(samples, (list, tuple)) and samples and isinstance(samples[0], WindowSample):
        y = np.array([s.labels[k] for s in samples])
    else:
        y = np.asarray(samples, dtype=np.int64)
    if y.size == 0:
        raise InsufficientDataError("class distribution of an empty sample set")
    counts = np.bincount(y, minlength=3)[:3]
    return ClassDistribution(counts, int(counts.sum()))


# -- synthetic data --------------------------------------------------------------


@dataclass
class SynthParams:
    """Mid-price random walk with two momentum regimes.

    Log-returns follow ``r_t = drift_s + momentum * r_{t-1} + vol_s * eps``
    where the regime ``s`` flips with probability ``switch_prob`` per tick.
    Book volumes lean toward the bid (ask) side by ``imbalance`` log-units
    while the drift is positive (negative), which makes the regime visible.
    """

    base_price: float = 100.0
    volatility: tuple[float, float] = (3e-5, 6e-5)
    drift: tuple[float, float] = (3e-6, -3e-6)
    imbalance: float = 0.3
    momentum: float = 0.3
    switch_prob: float = 0.01
    tick: float = 0.01
    alpha: float = 5e-5
    smoothing: int | None = 10
    horizons: tuple[int, ...] = HORIZONS


def label_moves(mids, horizons=HORIZONS, alpha: float = 5e-5, smoothing: int | None = None, n_rows=None):
    """Label row t from the mean of the next ``w`` mids (w = smoothing or k).

    The target for horizon k compares ``mean(mid[t+k-w+1 .. t+k])`` with
    ``mid[t]``; rows lacking a full future window are dropped from the result
    (``n_rows`` defaults to ``len(mids) - max(horizons)``).
    """
    mids = np.asarray(mids, dtype=np.float64)
    n = mids.size - max(horizons) if n_rows is None else n_rows
    if n < 1:
        raise InsufficientDataError("not enough future ticks to label any row")
    out = np.empty((n, len(horizons)), dtype=np.int64)
    csum = np.concatenate([[0.0], np.cumsum(mids)])
    t = np.arange(n)
    for j, k in enumerate(horizons):
        w = k if smoothing is None else min(smoothing, k)
        fut = (csum[t + k + 1] - csum[t + k + 1 - w]) / w
        rel = (fut - mids[t]) / mids[t]
        out[:, j] = np.where(rel > alpha, 0, np.where(rel < -alpha, 2, 1))
    return out


def _book_features(mids, rng: RngState, tick: float, lean=None):
    n = mids.size
    half_spread = tick * (1 + rng.integers(0, 3, size=n)) / 2
    lvl = np.arange(10)
    ask_p = mids[:, None] + half_spread[:, None] + tick * lvl[None, :] * (1 + 0.1 * rng.random((n, 10)))
    bid_p = mids[:, None] - half_spread[:, None] - tick * lvl[None, :] * (1 + 0.1 * rng.random((n, 10)))
    ask_p[:, 0] = mids + half_spread
    bid_p[:, 0] = mids - half_spread
    lean = np.zeros(n) if lean is None else np.asarray(lean, dtype=np.float64)
    ask_v = rng.lognormal(5.0, 0.5, size=(n, 10)) * np.exp(-lean)[:, None]
    bid_v = rng.lognormal(5.0, 0.5, size=(n, 10)) * np.exp(lean)[:, None]
    basic = np.stack([ask_p, ask_v, bid_p, bid_v], axis=2).reshape(n, 40)
    spreads = ask_p - bid_p
    level_mids = 0.5 * (ask_p + bid_p)
    ask_diff = np.hstack([ask_p[:, -1:] - ask_p[:, :1], np.abs(np.diff(ask_p, axis=1))])
    bid_diff = np.hstack([bid_p[:, :1] - bid_p[:, -1:], np.abs(np.diff(bid_p, axis=1))])
    means = np.stack([ask_p.mean(1), bid_p.mean(1), ask_v.mean(1), bid_v.mean(1)], axis=1)
    accum = np.stack([(ask_p - bid_p).sum(1), (ask_v - bid_v).sum(1)], axis=1)
    deriv = np.vstack([np.zeros((1, 40)), np.diff(basic, axis=0)])
    extra = rng.normal(size=(n, 18))
    feats = np.hstack([basic, spreads, level_mids, ask_diff, bid_diff, means, accum, deriv, extra])
    assert feats.shape[1] == N_FEATURES
    return feats


def synth_lob(rng: RngState, n: int, params: SynthParams | None = None):
    """Synthetic book series: ``(features (n, 144), labels (n, H), mids (n,))``.

    Raw (un-normalised) prices; level-1 ask/bid straddle the mid exactly so
    :func:`mid_prices` recovers it.
    """
    p = params or SynthParams()
    max_h = max(p.horizons)
    if n < 1:
        raise InsufficientDataError("n must be >= 1")
    total = n + max_h
    flips = rng.random(total) < p.switch_prob
    regime = np.cumsum(flips) % 2
    eps = rng.standard_normal(total)
    vol = np.asarray(p.volatility)[regime]
    drift = np.asarray(p.drift)[regime]
    r = np.zeros(total)
    for t in range(1, total):
        r[t] = drift[t] + p.momentum * r[t - 1] + vol[t] * eps[t]
    mids = p.base_price * np.exp(np.cumsum(r))
    labels = label_moves(mids, p.horizons, p.alpha, p.smoothing, n_rows=n)
    lean = p.imbalance * np.sign(drift[:n])
    feats = _book_features(mids[:n], rng, p.tick, lean)
    return feats, labels, mids[:n]


def synth_clusters(rng: RngState, n: int, T: int = 10, n_features: int = N_FEATURES,
                   separation: float = 1.0, horizons=HORIZONS) -> WindowSet:
    """Easy separable task: each window is a class mean plus unit noise.

    All horizons share the same label. Mid prices follow the label direction
    so backtests on this set are meaningful.
    """
    y = rng.integers(0, 3, size=n)
    centers = rng.standard_normal((3, n_features))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True) * np.sqrt(n_features) / 4
    X = centers[y][:, None, :] + rng.standard_normal((n, T, n_features))
    step = np.where(y == 0, 1e-4, np.where(y == 2, -1e-4, 0.0))
    mids = 100.0 * np.exp(np.concatenate([[0.0], np.cumsum(step)]))
    return WindowSet(X, {k: y.copy() for k in horizons}, np.arange(n), mids, T)
