"""Command-line entry point: ``tkan {prepare,train,evaluate,backtest,inspect-splines}``.

Exit codes: 0 success, 1 configuration error, 2 data/checkpoint error,
3 training divergence. Every artifact goes under ``--out-dir`` (default
``$TKAN_OUT_DIR`` or ``./runs``) next to a ``manifest-<command>.json``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    HORIZONS,
    LAYOUTS,
    SynthParams,
    load_fi2010,
    make_windows,
    mid_prices,
    read_cache,
    split_windows,
    synth_clusters,
    synth_lob,
    write_cache,
    zscore_apply,
    zscore_fit,
)
from .errors import (
    BacktestError,
    CheckpointError,
    ConfigError,
    DataError,
    DivergenceError,
    SignalError,
    TkanError,
)
from .evaluation import (
    BacktestConfig,
    ConfusionMatrix,
    alpha_decay,
    backtest_windows,
    metrics,
    model_predictor,
    oracle_predictor,
)
from .kan import KanLayer
from .models import ModelConfig, build_model
from .numerics import make_rng, silu
from .training import TrainConfig, parse_key_values, train, train_config_from_mapping

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict = field(default_factory=dict)
    seed: int | None = None
    data_fingerprint: str | None = None
    checkpoint: str | None = None
    outputs: list[str] = field(default_factory=list)
    started: str = ""
    finished: str | None = None
    status: str = "running"
    version: str = __version__

    def write(self, out_dir: Path) -> Path:
        path = out_dir / f"manifest-{self.command}.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str))
        return path


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _fingerprint(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return "sha256:" + h.hexdigest()


# -- data assembly ------------------------------------------------------------------


def _load_series(args):
    """Return raw (features, labels, mids, fingerprint) per --data / --synthetic."""
    if args.synthetic:
        rng = make_rng(args.seed, "synthetic", args.synthetic)
        if args.synthetic == "clusters":
            ws = synth_clusters(rng, args.synthetic_n, T=args.window)
            return ws, None, None, _fingerprint(ws.X, ws.label(HORIZONS[0]))
        feats, labels, mids = synth_lob(rng, args.synthetic_n, SynthParams())
        return feats, labels, mids, _fingerprint(feats, labels)
    if not args.data:
        raise DataError("no data given: pass --data PATH or --synthetic")
    path = Path(args.data)
    if not path.exists():
        raise DataError(f"data path does not exist: {path}")
    raw = path.read_bytes()
    if raw[:8] == b"TKANDATA":
        feats, labels = read_cache(path)
    else:
        feats, labels = load_fi2010(path, args.layout)
    mids = mid_prices(feats)
    if args.price_std is not None or args.price_mean is not None:
        mids = (args.price_mean or 0.0) + (args.price_std if args.price_std is not None else 1.0) * mids
    return feats, labels, mids, "sha256:" + hashlib.sha256(raw).hexdigest()


def _windows(args):
    """Window the series and split it contiguously; returns (train, test, fingerprint)."""
    feats, labels, mids, fp = _load_series(args)
    if labels is None:  # cluster task arrives pre-windowed
        tr, te = split_windows(feats, args.train_fraction)
        return tr, te, fp
    n_train_rows = int(round(feats.shape[0] * args.train_fraction))
    normalise = args.zscore if args.zscore is not None else bool(args.synthetic)
    if normalise:
        stats = zscore_fit(feats[:n_train_rows])
        feats = zscore_apply(stats, feats)
    ws = make_windows(feats, labels, args.window, None, mids)
    tr, te = split_windows(ws, args.train_fraction)
    return tr, te, fp


# -- commands -----------------------------------------------------------------------


def _model_config(args, file_values: dict) -> ModelConfig:
    names = {f.name: f.type for f in fields(ModelConfig)}
    values = {}
    for key, raw in file_values.items():
        if key in names:
            t = names[key]
            values[key] = int(raw) if t == "int" else float(raw) if t == "float" else raw
    for key in ("variant", "hidden_dim", "head_hidden", "head_layers", "head_input", "encoder_layers"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    values["window"] = args.window
    return ModelConfig(**values)


def cmd_train(args, out: Path, manifest: RunManifest) -> int:
    file_values = {}
    if args.config:
        if not Path(args.config).is_file():
            raise ConfigError(f"config file not found: {args.config}")
        file_values = parse_key_values(Path(args.config).read_text())
    model_keys = {f.name for f in fields(ModelConfig)}
    overrides = {k: v for k, v in file_values.items() if k not in model_keys}
    for flag, key in (("epochs", "max_epochs"), ("lr", "lr"), ("batch", "batch_size"), ("lam", "lam"),
                      ("horizon", "horizon"), ("patience", "patience"), ("seed", "seed"),
                      ("class_weights", "class_weight_mode")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = v
    tcfg = train_config_from_mapping(overrides)
    mcfg = _model_config(args, file_values)
    manifest.config = {"model": mcfg.to_dict(), "train": tcfg.to_dict()}
    manifest.seed = tcfg.seed
    args.seed = tcfg.seed
    manifest.write(out)

    tr, te, fp = _windows(args)
    manifest.data_fingerprint = fp
    model = build_model(mcfg, seed=tcfg.seed)
    log = None if args.quiet else (lambda s: print(s, flush=True))
    model, report = train(model, tr, te, tcfg, log=log)
    ckpt = save_checkpoint(model, out / "checkpoint.tkan")
    rep = report.to_csv(out / "train_report.csv")
    manifest.checkpoint = str(ckpt)
    manifest.outputs += [str(ckpt), str(rep)]
    print(f"best epoch {report.best_epoch}: valid macro F1 {max(report.valid_f1):.4f}  "
          f"({model.param_count} parameters, {report.wall_clock:.1f}s)")
    return EXIT_OK


def _predictor(args):
    if args.oracle:
        return oracle_predictor, None
    if not args.checkpoint:
        raise ConfigError("pass --checkpoint PATH or --oracle")
    model = load_checkpoint(args.checkpoint)
    if model.config.window != args.window:
        args.window = model.config.window
    return model_predictor(model), model


def _eval_set(args):
    tr, te, fp = _windows(args)
    return (te if args.split == "test" else tr if args.split == "train" else None), tr, te, fp


def cmd_evaluate(args, out: Path, manifest: RunManifest) -> int:
    manifest.write(out)
    predictor, model = _predictor(args)
    manifest.checkpoint = args.checkpoint
    ws, *_, fp = _eval_set(args)
    manifest.data_fingerprint = fp
    horizons = args.horizons or list(HORIZONS)
    k = args.horizon or 100
    probs = predictor(ws, k)
    m = metrics(ConfusionMatrix.from_predictions(ws.label(k), np.argmax(probs, axis=1)))
    print(f"horizon k={k}  ({len(ws)} samples)")
    print(m.table())
    curve = alpha_decay(predictor, ws, horizons, strict=False)
    undefined = [kk for kk, ic in zip(curve.horizons, curve.ic) if np.isnan(ic)]
    if undefined:
        print(f"note: IC undefined (constant signal or returns) at k={undefined}; written as nan",
              file=sys.stderr)
    path = curve.to_csv(out / "decay_curve.csv")
    manifest.outputs.append(str(path))
    print("\nk      IC        F1")
    for kk, ic, f1 in curve.rows():
        print(f"{kk:<5} {ic:8.4f} {f1:8.4f}")
    return EXIT_OK


def cmd_backtest(args, out: Path, manifest: RunManifest) -> int:
    manifest.write(out)
    predictor, model = _predictor(args)
    manifest.checkpoint = args.checkpoint
    ws, *_, fp = _eval_set(args)
    manifest.data_fingerprint = fp
    k = args.horizon or 100
    preds = np.argmax(predictor(ws, k), axis=1)
    ledger = backtest_windows(preds, ws, BacktestConfig(cost_bps=args.cost_bps))
    path = ledger.to_csv(out / "ledger.csv")
    manifest.outputs.append(str(path))
    print(f"cost {args.cost_bps:g} bps  steps {ledger.positions.size}  terminal return {ledger.terminal_return:.2f}%")
    return EXIT_OK


def _kan_layers(model) -> dict[str, KanLayer]:
    layers = {}
    for k, m in enumerate(model.head):
        if isinstance(m, KanLayer):
            layers[f"head{k}"] = m
    for k, cell in enumerate(model.encoder):
        for g in "ifgo":
            layer = getattr(cell, f"gate_{g}", None)
            if layer is not None:
                layers[f"encoder{k}.gate_{g}"] = layer
    return layers


def cmd_inspect_splines(args, out: Path, manifest: RunManifest) -> int:
    manifest.write(out)
    model = load_checkpoint(args.checkpoint)
    manifest.checkpoint = args.checkpoint
    layers = _kan_layers(model)
    if args.list:
        for name, layer in layers.items():
            print(f"{name}: {layer.out_dim} x {layer.in_dim} edges")
        return EXIT_OK
    if not layers:
        raise DataError("checkpoint contains no KAN layers")
    name = args.layer or next(iter(layers))
    if name not in layers:
        raise DataError(f"no KAN layer {name!r}; available: {', '.join(layers)}")
    layer = layers[name]
    edges = args.edge or [(0, 0)]
    lo = layer.grid.domain_lo if args.x_min is None else args.x_min
    hi = layer.grid.domain_hi if args.x_max is None else args.x_max
    xs = np.linspace(lo, hi, args.points)
    path = out / f"splines-{name}.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "out", "in", "x", "phi", "base", "spline"])
        for q, p in edges:
            if not (0 <= q < layer.out_dim and 0 <= p < layer.in_dim):
                raise DataError(f"edge ({q}, {p}) outside {name} ({layer.out_dim} x {layer.in_dim})")
            edge = layer.edge(q, p)
            base = edge.base_weight * silu(xs)
            spl = edge.spline_weight * edge.spline(xs)
            for x, b, s in zip(xs, base, spl):
                w.writerow([name, q, p, repr(float(x)), repr(float(b + s)), repr(float(b)), repr(float(s))])
    manifest.outputs.append(str(path))
    print(f"wrote {len(edges) * args.points} rows to {path}")
    return EXIT_OK


def cmd_prepare(args, out: Path, manifest: RunManifest) -> int:
    manifest.write(out)
    feats, labels, _, fp = _load_series(args)
    if labels is None:
        raise ConfigError("prepare supports --data or --synthetic lob")
    manifest.data_fingerprint = fp
    path = out / "data.cache"
    write_cache(path, feats, labels)
    manifest.outputs.append(str(path))
    print(f"cached {feats.shape[0]} snapshots to {path}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def _edge(text):
    try:
        q, p = (int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("edge must be OUT,IN") from None
    return q, p


def _int_list(text):
    try:
        return [int(s) for s in text.split(",") if s]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None


def _add_data_flags(p):
    p.add_argument("--data", help="FI-2010-style text file or a cache written by 'prepare'")
    p.add_argument("--layout", choices=LAYOUTS, default="rows_are_samples")
    p.add_argument("--synthetic", nargs="?", const="lob", choices=("lob", "clusters"),
                   help="use generated data instead of --data (default kind: lob)")
    p.add_argument("--synthetic-n", type=int, default=5000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--zscore", dest="zscore", action="store_true", default=None,
                   help="z-score features with stats from the training prefix")
    p.add_argument("--no-zscore", dest="zscore", action="store_false")
    p.add_argument("--price-mean", type=float, default=None, help="de-normalise mids: mean + std * mid")
    p.add_argument("--price-std", type=float, default=None)
    p.add_argument("--out-dir", default=os.environ.get("TKAN_OUT_DIR", "runs"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tkan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="parse a data file once and write a binary cache")
    _add_data_flags(p)

    p = sub.add_parser("train", help="train a forecaster")
    _add_data_flags(p)
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--variant", choices=("tkan_head", "tkan_gated", "deeplob_lite"))
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--encoder-layers", type=int)
    p.add_argument("--head-hidden", type=int)
    p.add_argument("--head-layers", type=int)
    p.add_argument("--head-input", choices=("last", "concat"))
    p.add_argument("--horizon", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--class-weights", choices=("inverse_frequency", "uniform"))
    p.add_argument("--quiet", action="store_true")

    for name, hlp in (("evaluate", "classification metrics and IC decay curve"),
                      ("backtest", "transaction-cost mid-price backtest")):
        p = sub.add_parser(name, help=hlp)
        _add_data_flags(p)
        p.add_argument("--checkpoint")
        p.add_argument("--oracle", action="store_true", help="use true labels as predictions")
        p.add_argument("--horizon", type=int, default=None)
        p.add_argument("--split", choices=("test", "train"), default="test")
        if name == "evaluate":
            p.add_argument("--horizons", type=_int_list, default=None)
        else:
            p.add_argument("--cost-bps", type=float, default=1.0)

    p = sub.add_parser("inspect-splines", help="sample learned edge functions to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer")
    p.add_argument("--edge", type=_edge, action="append", help="OUT,IN (repeatable)")
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--x-min", type=float)
    p.add_argument("--x-max", type=float)
    p.add_argument("--list", action="store_true")
    p.add_argument("--out-dir", default=os.environ.get("TKAN_OUT_DIR", "runs"))
    return parser


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "backtest": cmd_backtest,
    "inspect-splines": cmd_inspect_splines,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command != "train" and getattr(args, "seed", 0) is None:
        args.seed = 0
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(args.command, ["tkan"] + argv, config=vars(args).copy(),
                           seed=getattr(args, "seed", None), started=_now())
    code = EXIT_OK
    try:
        code = COMMANDS[args.command](args, out, manifest)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        code = EXIT_DIVERGED
    except (DataError, CheckpointError, BacktestError, SignalError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    except (ConfigError, TkanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    manifest.status = "ok" if code == EXIT_OK else f"failed ({code})"
    manifest.finished = _now()
    manifest.write(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
