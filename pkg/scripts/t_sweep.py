"""SNN accuracy over T for calibrated and pinned training, including tau > L."""

import argparse
import csv
from pathlib import Path

from snnforge.ann import TrainConfig
from snnforge.calibrate import CalibrationConfig, evaluate_snn, train_with_compensation

from _common import WORKLOADS, load

T_LIST = (1, 2, 4, 8, 16, 32, 64)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dataset", default="digits", choices=list(WORKLOADS))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--L", type=int, default=4)
    ap.add_argument("--taus", type=int, nargs="+", default=[4, 8])
    ap.add_argument("--out", default="results/t_sweep.csv")
    args = ap.parse_args()

    w = WORKLOADS[args.dataset]
    train, test = load(args.dataset, args.seed)
    modes = [("pinned", args.L, False)] + [(f"tau{t}", t, True) for t in args.taus]
    rows = []
    for label, tau, enabled in modes:
        cfg = TrainConfig(epochs=args.epochs, L=args.L, tau=tau, seed=args.seed, lambda_init=w["lambda_init"])
        _, snn, _ = train_with_compensation(train, w["arch"], cfg, CalibrationConfig(tau=tau, enabled=enabled), test)
        row = {"mode": label}
        row.update({f"T{T}": evaluate_snn(snn, test, T) for T in T_LIST})
        rows.append(row)
        print(", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)


if __name__ == "__main__":
    main()
