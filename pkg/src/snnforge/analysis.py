"""Conversion-error measurement, error decomposition and report files."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from snnforge.activation import QuantActParams, nq_forward, qcfs_forward
from snnforge.ann import NetworkDef, ann_trace
from snnforge.snn import IFLayerState, SNNOutput, SpikingNetwork, if_step, phi_from_counts, snn_forward
from snnforge.tensor import DTYPE, RandomSource, uniform

HIST_BINS = 101


class ConversionError(NamedTuple):
    eps: list[np.ndarray]  # phi - NQ(z) with fresh noise
    eq14: list[np.ndarray]  # A(phi_prev) - (v(T)-v(0))/T - NQ(z), same noise draws
    observable: list[np.ndarray]  # phi - a (noise-free)


def conversion_error(ann: NetworkDef, snn: SpikingNetwork, x: np.ndarray, T: int,
                     rs: RandomSource | None = None) -> ConversionError:
    """Per-layer ANN/SNN discrepancy for a batch ``x``.

    ``eq14`` evaluates the conversion error term by term from the simulator's
    membrane potentials; ``eps`` substitutes the simulator's phi for the first
    two terms, which the conservation audit shows are equal up to rounding, so
    an exact match yields exactly zero. Both draw the NQ noise once per layer
    from ``rs``.
    """
    rs = RandomSource(0).derive("conversion-error") if rs is None else rs
    x = np.asarray(x, dtype=DTYPE)
    single = x.shape == ann.input_shape
    if single:
        x = x[None]
    trace = ann_trace(ann, x, "eval")
    out = snn_forward(snn, x, T)
    eps, eq14, observable = [], [], []
    prev = x
    for k, (z, a, p) in enumerate(zip(trace.pre, trace.acts, ann.act_params)):
        nq = nq_forward(z, p, rs.derive("layer", k)).astype(np.float64)
        phi = out.phi[k].astype(np.float64)
        drift = (out.v_final[k].astype(np.float64) - out.v_init[k]) / T
        z_hat = snn.stages[k].apply(prev).astype(np.float64)
        eps.append(phi - nq)
        eq14.append(z_hat - drift - nq)
        observable.append(phi - a.astype(np.float64))
        prev = out.phi[k]
    if single:
        return ConversionError(*([t[0] for t in group] for group in (eps, eq14, observable)))
    return ConversionError(eps, eq14, observable)


def simulate_constant(z: np.ndarray, theta: float, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Single IF layer driven by constant current ``z`` from ``v(0) = theta/2``.

    Returns ``(phi, v_final)``.
    """
    state = IFLayerState.fresh(np.shape(z), theta)
    z = np.asarray(z, dtype=DTYPE)
    for _ in range(T):
        if_step(state, z)
    return phi_from_counts(state.spike_count, theta, T), state.v


def theorem1_mc(theta: float, L: int, T: int, delta: float, n_samples: int, rs: RandomSource):
    """Monte Carlo mean of ``phi(z, T) - NQ(z)`` for ``z ~ U(0, theta)``.

    ``lambda = theta`` and ``v(0) = theta/2``; with inputs in ``[0, theta]`` the
    final potential stays in ``[0, theta]``. Returns ``(mean, standard_error)``.
    """
    if n_samples < 10_000:
        raise ValueError("theorem1_mc needs at least 1e4 samples")
    z = uniform(rs.derive("z"), n_samples, 0.0, theta)
    phi, _ = simulate_constant(z, theta, T)
    nq = nq_forward(z, QuantActParams(lam=theta, L=L, delta=delta), rs.derive("noise"))
    eps = phi.astype(np.float64) - nq.astype(np.float64)
    return float(eps.mean()), float(eps.std(ddof=1) / np.sqrt(n_samples))


THEOREM1_T = (1, 2, 4, 8)
THEOREM1_L = (1, 2, 4, 8)
THEOREM1_DELTA = (0.0, 0.1, 0.5)


def theorem1_grid(n_samples: int = 100_000, seed: int = 0, theta: float = 1.0, k_sigma: float = 4.0) -> list[dict]:
    """Run every (T, L, delta) configuration; one dict per row."""
    rows = []
    base = RandomSource(seed).derive("theorem1")
    for T in THEOREM1_T:
        for L in THEOREM1_L:
            for delta in THEOREM1_DELTA:
                mean, se = theorem1_mc(theta, L, T, delta, n_samples, base.derive(T, L, delta))
                rows.append(dict(T=T, L=L, delta=delta, n=n_samples, mean=mean, stderr=se,
                                 passed=abs(mean) <= k_sigma * se))
    return rows


@dataclass
class LayerErrorStats:
    layer: int
    element_count: int
    conversion_error_mean: float
    conversion_error_std: float
    clip_fraction: float
    quant_grid_deviation: float
    residual_mean: float
    residual_std: float
    hist_edges: list[float] = field(default_factory=list)
    hist_counts: list[int] = field(default_factory=list)


@dataclass
class ErrorReport:
    T: int
    sample_count: int
    layers: list[LayerErrorStats] = field(default_factory=list)


def residual_histogram(values: np.ndarray, bins: int = HIST_BINS) -> tuple[list[float], list[int]]:
    """``bins`` uniform bins over +-3 std; out-of-range values land in the end bins.

    A zero-spread sample uses the range [-1, 1] so it falls in the center bin.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    sigma = float(values.std()) if values.size else 0.0
    half = 3.0 * sigma if sigma > 0 else 1.0
    edges = np.linspace(-half, half, bins + 1)
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return edges.tolist(), counts.astype(int).tolist()


def error_decompose(ann: NetworkDef, snn: SpikingNetwork, x: np.ndarray, T: int,
                    rs: RandomSource | None = None, batch_size: int = 256) -> ErrorReport:
    """Clipping share, quantization deviation and residual error per activation layer.

    ``clip_fraction`` is the share of pre-activations above ``lambda``;
    ``quant_grid_deviation`` is ``mean |clip(z, 0, lambda) - QCFS(z)|``; the
    residual statistics and histogram describe ``phi - a``.
    """
    rs = RandomSource(0).derive("decompose") if rs is None else rs
    x = np.asarray(x, dtype=DTYPE)
    pooled: dict[str, list[list[np.ndarray]]] = {k: [] for k in ("eps", "obs", "clip", "quant")}
    for b, start in enumerate(range(0, len(x), batch_size)):
        xb = x[start : start + batch_size]
        ce = conversion_error(ann, snn, xb, T, rs.derive("batch", b))
        trace = ann_trace(ann, xb, "eval")
        if not pooled["eps"]:
            for k in pooled:
                pooled[k] = [[] for _ in ce.eps]
        for l, (z, p) in enumerate(zip(trace.pre, ann.act_params)):
            lam = DTYPE(p.lam)
            pooled["eps"][l].append(ce.eps[l].ravel())
            pooled["obs"][l].append(ce.observable[l].ravel())
            pooled["clip"][l].append((z > lam).ravel())
            cont = np.clip(z, DTYPE(0), lam).astype(np.float64)
            pooled["quant"][l].append(np.abs(cont - qcfs_forward(z, p)).ravel())
    layers = []
    for l in range(len(pooled["eps"])):
        eps = np.concatenate(pooled["eps"][l])
        obs = np.concatenate(pooled["obs"][l])
        edges, counts = residual_histogram(obs)
        layers.append(LayerErrorStats(
            layer=l + 1,
            element_count=int(obs.size),
            conversion_error_mean=float(eps.mean()),
            conversion_error_std=float(eps.std()),
            clip_fraction=float(np.concatenate(pooled["clip"][l]).mean()),
            quant_grid_deviation=float(np.concatenate(pooled["quant"][l]).mean()),
            residual_mean=float(obs.mean()),
            residual_std=float(obs.std()),
            hist_edges=edges,
            hist_counts=counts,
        ))
    return ErrorReport(T=T, sample_count=len(x), layers=layers)


# --------------------------------------------------------------------------
# report files

REPORT_COLUMNS = [
    "layer",
    "element_count",
    "conversion_error_mean",
    "conversion_error_std",
    "clip_fraction",
    "quant_grid_deviation",
    "residual_mean",
    "residual_std",
    "hist_edges",
    "hist_counts",
]
_INT_FIELDS = {"layer", "element_count"}


def emit_report(report: ErrorReport, path, format: str = "csv") -> None:
    """Write ``report`` as CSV (one row per layer) or JSON.

    Floats are written with ``repr`` so parsing gives back the same values.
    The CSV starts with a ``#`` line carrying ``T`` and ``sample_count``.
    """
    path = Path(path)
    if format == "json":
        path.write_text(json.dumps(asdict(report), indent=1, sort_keys=True) + "\n")
        return
    if format != "csv":
        raise ValueError(f"unknown report format {format!r}")
    with open(path, "w", newline="") as fh:
        fh.write(f"# T={report.T} sample_count={report.sample_count}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for layer in report.layers:
            row = []
            for col in REPORT_COLUMNS:
                v = getattr(layer, col)
                if col == "hist_edges":
                    row.append(";".join(repr(float(e)) for e in v))
                elif col == "hist_counts":
                    row.append(";".join(str(int(c)) for c in v))
                else:
                    row.append(str(v) if col in _INT_FIELDS else repr(float(v)))
            w.writerow(row)


def load_report(path) -> ErrorReport:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        raw = json.loads(text)
        return ErrorReport(raw["T"], raw["sample_count"], [LayerErrorStats(**l) for l in raw["layers"]])
    lines = text.splitlines()
    meta = dict(item.split("=") for item in lines[0].lstrip("# ").split())
    reader = csv.DictReader(lines[1:])
    layers = []
    for row in reader:
        kw = {}
        for col in REPORT_COLUMNS:
            v = row[col]
            if col == "hist_edges":
                kw[col] = [float(e) for e in v.split(";")] if v else []
            elif col == "hist_counts":
                kw[col] = [int(c) for c in v.split(";")] if v else []
            else:
                kw[col] = int(v) if col in _INT_FIELDS else float(v)
        layers.append(LayerErrorStats(**kw))
    return ErrorReport(int(meta["T"]), int(meta["sample_count"]), layers)


def emit_traces(out: SNNOutput, path, sample: int = 0) -> None:
    """Per-neuron spike counts and phi of one sample of a batched simulation."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "neuron", "spike_count", "phi", "v_final"])
        for l, (count, phi, v) in enumerate(zip(out.spike_counts, out.phi, out.v_final)):
            c, p, vf = count[sample].ravel(), phi[sample].ravel(), v[sample].ravel()
            for i in range(c.size):
                w.writerow([l + 1, i, int(c[i]), repr(float(p[i])), repr(float(vf[i]))])


def write_rows(rows: list[dict], path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
