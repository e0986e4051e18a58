"""Classification metrics, information-coefficient decay curves and the
transaction-cost mid-price backtest.

IC here is the Spearman rank correlation between the directional signal
``p_up - p_down`` and the realised k-step forward mid return. Rank
correlation keeps the number independent of how the signal is scaled.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from .data import HORIZONS, WindowSet
from .errors import BacktestError, MissingHorizonError, SignalError

UP, NEUTRAL, DOWN = 0, 1, 2
DEFAULT_POSITIONS = {UP: 1.0, NEUTRAL: 0.0, DOWN: -1.0}


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, cols = predicted

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int = 3) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise ValueError("y_true and y_pred lengths differ")
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassificationMetrics:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray

    @property
    def macro_precision(self) -> float:
        return float(self.precision.mean())

    @property
    def macro_recall(self) -> float:
        return float(self.recall.mean())

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean())

    def table(self) -> str:
        names = ("up", "neutral", "down")
        lines = [f"{'class':<8} {'precision':>9} {'recall':>9} {'f1':>9}"]
        for c, name in enumerate(names):
            lines.append(f"{name:<8} {self.precision[c]:9.4f} {self.recall[c]:9.4f} {self.f1[c]:9.4f}")
        lines.append(f"{'macro':<8} {self.macro_precision:9.4f} {self.macro_recall:9.4f} {self.macro_f1:9.4f}")
        return "\n".join(lines)


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def metrics(cm: ConfusionMatrix) -> ClassificationMetrics:
    c = np.asarray(cm.counts, dtype=np.float64)
    tp = np.diag(c)
    precision = _safe_div(tp, c.sum(axis=0))
    recall = _safe_div(tp, c.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return ClassificationMetrics(precision, recall, f1)


def macro_f1(y_true, y_pred) -> float:
    return metrics(ConfusionMatrix.from_predictions(y_true, y_pred)).macro_f1


def direction_signal(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    return p[:, UP] - p[:, DOWN]


def information_coefficient(signal, forward_returns) -> float:
    s = np.asarray(signal, dtype=np.float64).ravel()
    r = np.asarray(forward_returns, dtype=np.float64).ravel()
    if s.shape != r.shape:
        raise SignalError(f"signal and returns differ in length ({s.size} vs {r.size})")
    if s.size < 3:
        raise SignalError("information coefficient needs at least 3 observations")
    if np.ptp(s) == 0 or np.ptp(r) == 0:
        raise SignalError("rank correlation undefined for a constant input")
    rs = rankdata(s)
    rr = rankdata(r)
    rs -= rs.mean()
    rr -= rr.mean()
    return float((rs @ rr) / np.sqrt((rs @ rs) * (rr @ rr)))


# -- alpha decay ------------------------------------------------------------------

Predictor = Callable[[WindowSet, int], np.ndarray]


def model_predictor(model, batch_size: int = 512) -> Predictor:
    """Horizon-agnostic predictor; probabilities are computed once and reused."""
    memo = {}

    def predict(windows: WindowSet, k: int) -> np.ndarray:
        key = id(windows)
        if key not in memo:
            memo[key] = model.predict_proba(windows.X, batch_size)
        return memo[key]

    return predict


def oracle_predictor(windows: WindowSet, k: int) -> np.ndarray:
    """Perfect foresight: one-hot of the true label at horizon k."""
    return np.eye(3)[windows.label(k)]


def constant_predictor(cls: int = NEUTRAL) -> Predictor:
    def predict(windows: WindowSet, k: int) -> np.ndarray:
        return np.tile(np.eye(3)[cls], (len(windows), 1))

    return predict


@dataclass
class DecayCurve:
    horizons: list[int] = field(default_factory=list)
    ic: list[float] = field(default_factory=list)
    f1: list[float] = field(default_factory=list)

    def rows(self):
        return list(zip(self.horizons, self.ic, self.f1))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "ic", "f1"])
            for k, ic, f1 in self.rows():
                w.writerow([k, repr(ic), repr(f1)])
        return path


def evaluate_horizon(probs, windows: WindowSet, k: int, strict: bool = True) -> tuple[float, float]:
    """(IC, macro F1) of one set of class probabilities at horizon k.

    With ``strict=False`` an undefined IC (constant signal or returns, too
    few windows with a forward price) is reported as NaN instead of raising.
    """
    probs = np.asarray(probs, dtype=np.float64)
    y = windows.label(k)
    f1 = macro_f1(y, probs.argmax(axis=1))
    ret, ok = windows.forward_returns(k)
    try:
        ic = information_coefficient(direction_signal(probs)[ok], ret[ok])
    except SignalError:
        if strict:
            raise
        ic = float("nan")
    return ic, f1


def alpha_decay(predictor: Predictor, windows: WindowSet, horizons=HORIZONS, strict: bool = True) -> DecayCurve:
    missing = [k for k in horizons if k not in windows.labels]
    if missing:
        raise MissingHorizonError(f"test data lacks labels for horizon(s) {missing}")
    curve = DecayCurve()
    for k in sorted(horizons):
        ic, f1 = evaluate_horizon(predictor(windows, k), windows, k, strict)
        curve.horizons.append(k)
        curve.ic.append(ic)
        curve.f1.append(f1)
    return curve


# -- backtest -------------------------------------------------------------------


@dataclass
class BacktestConfig:
    cost_bps: float = 1.0
    positions: dict = field(default_factory=lambda: dict(DEFAULT_POSITIONS))
    initial_equity: float = 1.0

    def __post_init__(self):
        if self.cost_bps < 0:
            raise BacktestError("cost_bps must be non-negative")


@dataclass
class BacktestLedger:
    positions: np.ndarray
    mids: np.ndarray
    step_returns: np.ndarray
    costs: np.ndarray
    cum_returns: np.ndarray
    initial_equity: float = 1.0

    @property
    def terminal_return(self) -> float:
        """Terminal compounded return in percent."""
        return 100.0 * float(self.cum_returns[-1]) if self.cum_returns.size else 0.0

    @property
    def equity(self) -> np.ndarray:
        return self.initial_equity * (1.0 + self.cum_returns)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "mid", "position", "step_return", "cum_return"])
            for t in range(self.positions.size):
                w.writerow([t, repr(float(self.mids[t])), repr(float(self.positions[t])),
                            repr(float(self.step_returns[t])), repr(float(self.cum_returns[t]))])
        return path


def backtest(predictions, mids, cfg: BacktestConfig | None = None) -> BacktestLedger:
    """Trade unit notional on the mid price.

    The position chosen at t earns the return from t to t+1; turnover
    ``|pos_t - pos_{t-1}|`` pays ``cost_bps`` basis points (flat before t=0).
    Returns compound multiplicatively.
    """
    cfg = cfg or BacktestConfig()
    pred = np.asarray(predictions, dtype=np.int64).ravel()
    px = np.asarray(mids, dtype=np.float64).ravel()
    if pred.size != px.size - 1:
        raise BacktestError(f"need len(mids) = len(predictions) + 1, got {px.size} and {pred.size}")
    if np.any(px <= 0) or not np.all(np.isfinite(px)):
        raise BacktestError("mid prices must be positive and finite")
    try:
        pos = np.array([cfg.positions[int(p)] for p in pred], dtype=np.float64)
    except KeyError as exc:
        raise BacktestError(f"prediction {exc.args[0]} has no position mapping") from None
    move = np.diff(px) / px[:-1]
    turnover = np.abs(np.diff(np.concatenate([[0.0], pos])))
    costs = cfg.cost_bps * 1e-4 * turnover
    step = pos * move - costs
    cum = np.cumprod(1.0 + step) - 1.0
    return BacktestLedger(pos, px[:-1], step, costs, cum, cfg.initial_equity)


def backtest_windows(predictions, windows: WindowSet, cfg: BacktestConfig | None = None) -> BacktestLedger:
    """Backtest predictions made at each window end against the series mids."""
    if windows.mids is None:
        raise BacktestError("window set carries no mid-price series")
    pred = np.asarray(predictions)
    end = windows.end_index
    if end.size and np.any(np.diff(end) != 1):
        raise BacktestError("backtest needs windows with consecutive end rows")
    usable = end + 1 < windows.mids.size
    pred, end = pred[usable], end[usable]
    if pred.size == 0:
        raise BacktestError("no window has a next-step mid price")
    px = windows.mids[end[0]:end[-1] + 2]
    return backtest(pred, px, cfg)


def ledger_terminal_from_csv(path) -> float:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    growth = np.prod([1.0 + float(r["step_return"]) for r in rows])
    return 100.0 * (growth - 1.0)
