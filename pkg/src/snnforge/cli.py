"""Command-line entry point.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from snnforge import analysis
from snnforge.ann import NetworkDef, TrainConfig, evaluate_ann
from snnforge.calibrate import CalibrationConfig, evaluate_snn, train_with_compensation
from snnforge.convert import convert
from snnforge.errors import SNNForgeError
from snnforge.io import DatasetHandle, load_csv, load_digits8, load_idx, load_model, save_model, stratified_split, synth
from snnforge.tensor import RandomSource

log = logging.getLogger("snnforge")

DEFAULT_T_LIST = (1, 2, 4, 8, 16, 32, 64)
SYNTH_TRAIN_N = 1000


# --------------------------------------------------------------------------
# argument types


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def t_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad time-step list {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"time steps must be >= 1, got {text!r}")
    return values


def val_fraction(text: str) -> float:
    v = float(text)
    if not 0 < v < 0.5:
        raise argparse.ArgumentTypeError(f"must lie in (0, 0.5), got {v}")
    return v


# --------------------------------------------------------------------------
# data resolution


def resolve_data(spec: str, seed: int) -> tuple[DatasetHandle, DatasetHandle]:
    """Turn a ``--data`` spec into ``(train, test)``.

    ``synth:NAME[:N]`` draws train and test sets from independent seeds;
    ``digits`` is the bundled 8x8 digits set; ``idx:IMG,LBL`` and ``csv:PATH``
    hold out a stratified 20% as the test set.
    """
    kind, _, rest = spec.partition(":")
    if kind == "synth":
        name, _, n = rest.partition(":")
        n = int(n) if n else SYNTH_TRAIN_N
        test_seed = RandomSource(seed).derive("synth-test").stream_key & 0x7FFFFFFF
        return synth(name, n, seed), synth(name, max(n // 2, 2), test_seed)
    if kind == "digits":
        return load_digits8(seed)
    if kind == "idx":
        img, _, lbl = rest.partition(",")
        full = load_idx(img, lbl)
    elif kind == "csv":
        full = load_csv(rest)
    else:
        raise ValueError(f"unknown data spec {spec!r}; use synth:NAME, digits, idx:IMG,LBL or csv:PATH")
    return stratified_split(full, 0.2, RandomSource(seed).derive("test-split"))


def pick_split(spec: str, seed: int, split: str) -> DatasetHandle:
    train, test = resolve_data(spec, seed)
    return train if split == "train" else test


# --------------------------------------------------------------------------
# manifest


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out: Path, args: argparse.Namespace, resolved: dict, outputs: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "seed": getattr(args, "seed", None),
        "config": resolved,
        "outputs": outputs,
        "started": _now(),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def finish_manifest(path: Path, **extra) -> None:
    manifest = json.loads(path.read_text())
    manifest.update(extra, finished=_now())
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# commands


def _configs(args) -> tuple[TrainConfig, CalibrationConfig]:
    tau = args.tau if args.tau is not None else args.L
    cfg = TrainConfig(
        lr0=args.lr,
        epochs=args.epochs,
        weight_decay=args.wd,
        momentum=args.momentum,
        batch_size=args.batch,
        L=args.L,
        tau=tau,
        seed=args.seed,
        val_fraction=args.val_frac,
        lambda_init=args.lambda_init,
    )
    cal = CalibrationConfig(tau=tau, val_fraction=args.val_frac, enabled=not args.no_calibrate)
    return cfg, cal


def cmd_train(args) -> int:
    cfg, cal = _configs(args)
    out = Path(args.out)
    outputs = {"best_ann": "best_ann.snnf", "best_snn": "best_snn.snnf", "history": "history.csv"}
    resolved = {"train": asdict(cfg), "calibration": asdict(cal), "data": args.data, "arch": args.arch}
    manifest = write_manifest(out, args, resolved, outputs)
    train, test = resolve_data(args.data, args.seed)
    best_ann, best_snn, history = train_with_compensation(train, args.arch, cfg, cal, test)
    save_model(best_ann, out / outputs["best_ann"])
    save_model(best_snn, out / outputs["best_snn"])
    history.to_csv(out / outputs["history"])
    finish_manifest(manifest, best_snn_epoch=history.best_snn_epoch, best_ann_epoch=history.best_ann_epoch)
    best = history.records[history.best_snn_epoch - 1]
    print(f"best SNN epoch {history.best_snn_epoch}: snn_acc={best.snn_acc:.4f} ann_acc={best.ann_acc:.4f}; "
          f"best ANN epoch {history.best_ann_epoch}")
    return 0


def cmd_convert(args) -> int:
    net = load_model(args.model)
    if not isinstance(net, NetworkDef):
        raise ValueError(f"{args.model} is already an SNN model")
    save_model(convert(net), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    net = load_model(args.model)
    data = pick_split(args.data, args.seed, args.split)
    if isinstance(net, NetworkDef):
        ann_acc = evaluate_ann(net, data.x, data.y)
        snn = convert(net)
    else:
        ann_acc, snn = None, net
    row = {"model": Path(args.model).name, "ann_acc": "" if ann_acc is None else repr(ann_acc)}
    for T in args.T_list:
        row[f"T{T}"] = repr(evaluate_snn(snn, data, T))
    text = ",".join(row) + "\n" + ",".join(row.values()) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_analyze(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.what == "theorem1":
        if args.grid:
            rows = analysis.theorem1_grid(args.n, args.seed)
        else:
            T = args.T or args.L
            mean, se = analysis.theorem1_mc(1.0, args.L, T, args.delta, args.n, RandomSource(args.seed).derive("theorem1"))
            rows = [dict(T=T, L=args.L, delta=args.delta, n=args.n, mean=mean, stderr=se, passed=abs(mean) <= 4 * se)]
        analysis.write_rows(rows, out)
        failed = sum(not r["passed"] for r in rows)
        print(f"{len(rows)} configurations, {failed} outside 4 standard errors")
        return 0
    if args.what == "overhead":
        return _overhead(args, out)

    net = load_model(args.model)
    if not isinstance(net, NetworkDef):
        raise ValueError("analysis needs the source ANN model")
    data = pick_split(args.data, args.seed, args.split)
    snn = convert(net)
    T = args.T if args.T is not None else net.act_params[0].L
    report = analysis.error_decompose(net, snn, data.x, T, RandomSource(args.seed).derive("analyze"))
    analysis.emit_report(report, out, "json" if out.suffix == ".json" else "csv")
    for layer in report.layers:
        if args.what == "residual":
            print(f"layer {layer.layer}: mean {layer.residual_mean:+.5f} std {layer.residual_std:.5f}")
        else:
            print(f"layer {layer.layer}: clip {layer.clip_fraction:.4f} quant {layer.quant_grid_deviation:.5f} "
                  f"residual {layer.residual_mean:+.5f}+-{layer.residual_std:.5f}")
    return 0


def _overhead(args, out: Path) -> int:
    train, test = resolve_data(args.data, args.seed)
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed, L=args.L, lambda_init=args.lambda_init)
    cols = {}
    for enabled in (False, True):
        _, _, history = train_with_compensation(train, args.arch, cfg, CalibrationConfig(tau=args.L, enabled=enabled), test)
        cols[enabled] = [r.train_seconds + r.calibration_seconds for r in history.records]
    rows = [
        {"epoch": e + 1, "seconds_no_calibration": f"{a:.6f}", "seconds_calibration": f"{b:.6f}"}
        for e, (a, b) in enumerate(zip(cols[False], cols[True]))
    ]
    analysis.write_rows(rows, out)
    ratio = float(np.mean(cols[True]) / np.mean(cols[False]))
    print(f"per-epoch time ratio (calibration / baseline): {ratio:.3f}")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snnforge", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train with layer-wise noise compensation")
    t.add_argument("--data", required=True)
    t.add_argument("--arch", default="mlp-64-64")
    t.add_argument("--L", type=positive_int, default=4)
    t.add_argument("--tau", type=positive_int, default=None, help="noise-induction time step (default: L)")
    t.add_argument("--epochs", type=positive_int, default=30)
    t.add_argument("--lr", type=positive_float, default=0.1)
    t.add_argument("--wd", type=float, default=5e-4)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--batch", type=positive_int, default=64)
    t.add_argument("--val-frac", type=val_fraction, default=0.05)
    t.add_argument("--lambda-init", type=positive_float, default=8.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-calibrate", action="store_true", help="pin delta at 0 (QCFS baseline)")
    t.add_argument("--out", default="runs/latest")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("convert", help="convert an ANN model file to an SNN model file")
    c.add_argument("--model", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_convert)

    e = sub.add_parser("eval", help="ANN accuracy and SNN accuracy over a T sweep")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--T-list", dest="T_list", type=t_list, default=list(DEFAULT_T_LIST))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="error analyses")
    a.add_argument("what", choices=("residual", "theorem1", "decompose", "overhead"))
    a.add_argument("--model")
    a.add_argument("--data", default="digits")
    a.add_argument("--split", choices=("train", "test"), default="test")
    a.add_argument("--T", type=positive_int, default=None)
    a.add_argument("--tau", dest="T", type=positive_int)
    a.add_argument("--L", type=positive_int, default=4)
    a.add_argument("--delta", type=float, default=0.0)
    a.add_argument("--grid", action="store_true", help="theorem1: full T x L x delta grid")
    a.add_argument("--n", type=positive_int, default=100_000)
    a.add_argument("--arch", default="cnn-8-16-f32")
    a.add_argument("--epochs", type=positive_int, default=5)
    a.add_argument("--lambda-init", type=positive_float, default=8.0)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)
    return p


def _thread_limit():
    n = os.environ.get("SNNFORGE_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "analyze" and args.what in ("residual", "decompose") and not args.model:
        parser.error(f"analyze {args.what} requires --model")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except (SNNForgeError, ValueError, OSError) as exc:
        print(f"snnforge {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
