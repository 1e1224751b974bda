"""Paired-seed comparison: calibrated training vs delta pinned at zero.

Writes one row per (dataset, seed, mode) with the SNN-best checkpoint's
accuracies and per-epoch timings.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from snnforge.ann import TrainConfig
from snnforge.calibrate import CalibrationConfig, train_with_compensation

from _common import WORKLOADS, load


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--datasets", nargs="+", default=list(WORKLOADS))
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--L", type=int, default=4)
    ap.add_argument("--out", default="results/calibration_benefit.csv")
    args = ap.parse_args()

    rows = []
    for name in args.datasets:
        w = WORKLOADS[name]
        for seed in range(args.seeds):
            train, test = load(name, seed)
            cfg = TrainConfig(epochs=args.epochs, L=args.L, seed=seed, lambda_init=w["lambda_init"])
            for calibrated in (False, True):
                cal = CalibrationConfig(tau=args.L, enabled=calibrated)
                _, _, hist = train_with_compensation(train, w["arch"], cfg, cal, test)
                best = hist.records[hist.best_snn_epoch - 1]
                rows.append(dict(
                    dataset=name, seed=seed, calibrated=calibrated,
                    best_snn_epoch=hist.best_snn_epoch, best_ann_epoch=hist.best_ann_epoch,
                    snn_acc=best.snn_acc, ann_acc=best.ann_acc,
                    epoch_seconds=float(np.mean([r.train_seconds + r.calibration_seconds for r in hist.records])),
                ))
                print(rows[-1])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)

    for name in args.datasets:
        pairs = [(r, s) for r in rows for s in rows
                 if r["dataset"] == s["dataset"] == name and r["seed"] == s["seed"] and r["calibrated"] and not s["calibrated"]]
        wins = sum(r["snn_acc"] >= s["snn_acc"] for r, s in pairs)
        drop = 100 * np.mean([s["ann_acc"] - r["ann_acc"] for r, s in pairs])
        print(f"{name}: calibrated >= pinned in {wins}/{len(pairs)} seeds, mean ANN drop {drop:+.2f} points")


if __name__ == "__main__":
    main()
