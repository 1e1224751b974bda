"""Layer-wise residual-error compensation during ANN training.

Each epoch the ANN is converted, a held-out validation split is pushed through
both the ANN (noise-free) and the SNN at ``tau`` steps, and the population
standard deviation of ``phi - a`` per activation layer becomes that layer's
noise intensity for the next epoch. Checkpoints are chosen by SNN accuracy.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from snnforge.ann import (
    NetworkDef,
    TrainConfig,
    ann_trace,
    build_network,
    evaluate_ann,
    train_epoch,
)
from snnforge.convert import convert
from snnforge.errors import EmptyClass, MissingLayer, ShapeMismatch
from snnforge.io import DatasetHandle, stratified_split
from snnforge.snn import SpikingNetwork, snn_forward
from snnforge.tensor import RandomSource

log = logging.getLogger(__name__)


@dataclass
class CalibrationConfig:
    tau: int = 4
    val_fraction: float = 0.05
    recalibrate_every: int = 1
    enabled: bool = True  # False pins delta at 0 (plain QCFS training)

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if not 0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5)")
        if self.recalibrate_every < 1:
            raise ValueError("recalibrate_every must be >= 1")


@dataclass
class ResidualStats:
    means: list[float]
    stds: list[float]
    sample_count: int
    element_counts: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.sample_count <= 0:
            raise ValueError("residual statistics need at least one sample")
        if any(s < 0 for s in self.stds):
            raise ValueError("negative standard deviation")


def split_validation(dataset: DatasetHandle, fraction: float, seed: int):
    """Stratified, seed-keyed split into disjoint ``(train_set, val_set)``."""
    if not 0 < fraction < 0.5:
        raise ValueError(f"validation fraction must lie in (0, 0.5), got {fraction}")
    counts = np.bincount(dataset.y, minlength=dataset.class_count)
    present = counts[counts > 0]
    if np.any(present < 2):
        raise EmptyClass("every class needs at least 2 samples to split")
    return stratified_split(dataset, fraction, RandomSource(seed).derive("validation-split"))


def residual_tensors(ann: NetworkDef, snn: SpikingNetwork, x: np.ndarray, T: int, batch_size: int = 256):
    """``phi^l - a^l`` per activation layer, stacked over all samples in ``x``."""
    per_layer: list[list[np.ndarray]] = []
    for start in range(0, len(x), batch_size):
        xb = x[start : start + batch_size]
        acts = ann_trace(ann, xb, "eval").acts
        phi = snn_forward(snn, xb, T).phi
        if len(acts) != len(phi):
            raise ShapeMismatch(f"ANN has {len(acts)} activation layers, SNN has {len(phi)} IF layers")
        if not per_layer:
            per_layer = [[] for _ in acts]
        for bucket, a, p in zip(per_layer, acts, phi):
            if a.shape != p.shape:
                raise ShapeMismatch(f"ANN output {a.shape} vs SNN phi {p.shape}")
            bucket.append(p.astype(np.float64) - a.astype(np.float64))
    return [np.concatenate(b) for b in per_layer]


def measure_residual(ann: NetworkDef, snn: SpikingNetwork, val_set: DatasetHandle, tau: int) -> ResidualStats:
    """Per-layer mean and population std of ``phi(tau) - a`` over the validation set,
    pooled across samples, channels and spatial positions."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    res = residual_tensors(ann, snn, val_set.x, tau)
    return ResidualStats(
        means=[float(r.mean()) for r in res],
        stds=[float(r.std()) for r in res],
        sample_count=len(val_set),
        element_counts=[int(r.size) for r in res],
    )


def induce_noise(stats: ResidualStats, ann: NetworkDef) -> NetworkDef:
    """Copy of ``ann`` with each activation layer's ``delta`` set to the measured std."""
    params = ann.act_params
    if len(stats.stds) < len(params):
        raise MissingLayer(f"statistics cover {len(stats.stds)} of {len(params)} activation layers")
    out = ann.copy()
    for p, std in zip(out.act_params, stats.stds):
        p.set_delta(std)
    return out


def evaluate_snn(snn: SpikingNetwork, data: DatasetHandle, T: int, batch_size: int = 256) -> float:
    correct = 0
    for start in range(0, len(data), batch_size):
        logits = snn_forward(snn, data.x[start : start + batch_size], T).logits
        correct += int(np.sum(np.argmax(logits, axis=1) == data.y[start : start + batch_size]))
    return correct / len(data)


@dataclass
class EpochRecord:
    epoch: int  # 1-based
    ann_acc: float
    snn_acc: float
    delta: list[float]  # noise intensities used while training this epoch
    measured_std: list[float] | None  # residual std measured after this epoch
    measured_mean: list[float] | None
    train_loss: float
    train_acc: float
    train_seconds: float
    calibration_seconds: float
    wall_seconds: float


def select_best(values) -> int:
    """Index of the first maximum."""
    values = list(values)
    if not values:
        raise ValueError("empty history")
    return max(range(len(values)), key=lambda i: (values[i], -i))


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def best_snn_epoch(self) -> int:
        return self.records[select_best(r.snn_acc for r in self.records)].epoch

    @property
    def best_ann_epoch(self) -> int:
        return self.records[select_best(r.ann_acc for r in self.records)].epoch

    def columns(self) -> list[str]:
        n = len(self.records[0].delta) if self.records else 0
        return ["epoch", "ann_acc", "snn_acc"] + [f"delta_{i + 1}" for i in range(n)] + ["epoch_wall_seconds"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for r in self.records:
                w.writerow([r.epoch, repr(r.ann_acc), repr(r.snn_acc), *map(repr, r.delta), f"{r.wall_seconds:.6f}"])


def train_with_compensation(
    dataset: DatasetHandle,
    arch,
    cfg: TrainConfig,
    cal: CalibrationConfig | None = None,
    test_set: DatasetHandle | None = None,
):
    """Train with per-epoch noise induction and SNN-accuracy checkpointing.

    ``arch`` is an architecture string (see :func:`build_network`) or an
    initial NetworkDef. Epoch 1 trains with ``delta = 0``; after every epoch
    the model is converted, residuals are measured on the validation split at
    ``tau`` steps, and the measured stds become next epoch's ``delta``. The
    SNN is scored on ``test_set`` (the validation split if omitted) at ``tau``
    steps and the best-scoring epoch is returned.

    Returns ``(best_ann, best_snn, history)``.
    """
    if cal is None:
        cal = CalibrationConfig(tau=cfg.tau, val_fraction=cfg.val_fraction)
    train_set, val_set = split_validation(dataset, cal.val_fraction, cfg.seed)
    test_set = val_set if test_set is None else test_set
    if isinstance(arch, NetworkDef):
        net = arch.copy()
    else:
        net = build_network(arch, dataset.input_shape, dataset.class_count, cfg.L, cfg.seed, cfg.lambda_init)
    net.dataset = dataset.provenance
    for p in net.act_params:
        p.set_delta(0.0)

    rs = RandomSource(cfg.seed).derive("train")
    opt_state: dict = {}
    history = TrainingHistory()
    best = None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        delta_used = [p.delta for p in net.act_params]
        _, loss, train_acc = train_epoch(net, train_set, cfg, epoch, rs, opt_state)
        t1 = time.perf_counter()

        snn = convert(net)
        trained = net
        stats = None
        if cal.enabled and (epoch + 1) % cal.recalibrate_every == 0:
            stats = measure_residual(net, snn, val_set, cal.tau)
            net = induce_noise(stats, net)
        t2 = time.perf_counter()

        ann_acc = evaluate_ann(trained, test_set.x, test_set.y)
        snn_acc = evaluate_snn(snn, test_set, cal.tau)
        rec = EpochRecord(
            epoch=epoch + 1,
            ann_acc=ann_acc,
            snn_acc=snn_acc,
            delta=delta_used,
            measured_std=None if stats is None else stats.stds,
            measured_mean=None if stats is None else stats.means,
            train_loss=loss,
            train_acc=train_acc,
            train_seconds=t1 - t0,
            calibration_seconds=t2 - t1,
            wall_seconds=time.perf_counter() - t0,
        )
        history.records.append(rec)
        if best is None or snn_acc > best[0]:
            best = (snn_acc, trained.copy(), snn)
        log.info("epoch %d loss %.4f ann %.4f snn@%d %.4f delta %s", rec.epoch, loss, ann_acc, cal.tau, snn_acc,
                 [round(d, 4) for d in delta_used])
    return best[1], best[2], history
