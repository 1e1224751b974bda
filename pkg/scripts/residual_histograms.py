"""Per-layer histograms of phi - a for a QCFS-trained (delta pinned) model.

Saves the error report and, when matplotlib is available, one PNG panel per layer.
"""

import argparse
from pathlib import Path

import numpy as np

from snnforge.analysis import emit_report, error_decompose
from snnforge.ann import TrainConfig
from snnforge.calibrate import CalibrationConfig, train_with_compensation

from _common import WORKLOADS, load


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dataset", default="digits", choices=list(WORKLOADS))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--L", type=int, default=4)
    ap.add_argument("--calibrate", action="store_true")
    ap.add_argument("--out", default="results/residuals")
    args = ap.parse_args()

    w = WORKLOADS[args.dataset]
    train, test = load(args.dataset, args.seed)
    cfg = TrainConfig(epochs=args.epochs, L=args.L, seed=args.seed, lambda_init=w["lambda_init"])
    ann, snn, _ = train_with_compensation(train, w["arch"], cfg, CalibrationConfig(tau=args.L, enabled=args.calibrate), test)
    report = error_decompose(ann, snn, test.x, args.L)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(report, out / "report.csv")
    for layer in report.layers:
        ratio = abs(layer.residual_mean) / layer.residual_std if layer.residual_std else 0.0
        print(f"layer {layer.layer}: mean {layer.residual_mean:+.5f} std {layer.residual_std:.5f} |mean|/std {ratio:.3f}")

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, axes = plt.subplots(1, len(report.layers), figsize=(4 * len(report.layers), 3))
    for ax, layer in zip(np.atleast_1d(axes), report.layers):
        edges = np.array(layer.hist_edges)
        ax.bar(edges[:-1], layer.hist_counts, width=np.diff(edges), align="edge")
        ax.set_title(f"layer {layer.layer}")
        ax.set_xlabel("phi - a")
    fig.tight_layout()
    fig.savefig(out / "histograms.png", dpi=120)


if __name__ == "__main__":
    main()
