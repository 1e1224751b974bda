"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) and then
asserts, so a failing criterion is also a failing test. Trained runs are shared
through a module-scoped cache.
"""

import time

import numpy as np
import pytest

from snnforge.activation import QuantActParams, nq_forward, qcfs_forward
from snnforge.ann import TrainConfig, ann_trace
from snnforge.analysis import theorem1_grid
from snnforge.calibrate import (
    CalibrationConfig,
    EpochRecord,
    TrainingHistory,
    evaluate_snn,
    measure_residual,
    train_with_compensation,
)
from snnforge.cli import resolve_data
from snnforge.convert import convert
from snnforge.io import load_digits8
from snnforge.snn import eq5_audit, snn_forward
from snnforge.tensor import RandomSource
from tests.nets import bounded_single_layer, on_grid, random_cnn, random_mlp

SEEDS = range(5)
EPOCHS = 30
L = TAU = 4

# spirals starts lambda at 1: inputs have unit radius, so no pre-activation
# ever reaches the default 8 and lambda would get no gradient
WORKLOADS = {
    "spirals": dict(arch="mlp-64-64", lambda_init=1.0),
    "digits": dict(arch="cnn-8-16-f32", lambda_init=8.0),
}


def _data(name, seed):
    if name == "digits":
        return load_digits8(seed)
    return resolve_data("synth:spirals", seed)


def scalar_if_count(z, theta, T):
    v, n = theta / 2, 0
    for _ in range(T):
        v += z
        if v >= theta:
            v -= theta
            n += 1
    return n


@pytest.fixture(scope="module")
def runs():
    """(dataset, seed, calibrated) -> dict(best_ann, best_snn, history, test)."""
    cache = {}
    for name, w in WORKLOADS.items():
        for seed in SEEDS:
            train, test = _data(name, seed)
            cfg = TrainConfig(epochs=EPOCHS, L=L, tau=TAU, seed=seed, lambda_init=w["lambda_init"])
            for calibrated in (True, False):
                cal = CalibrationConfig(tau=TAU, val_fraction=cfg.val_fraction, enabled=calibrated)
                best_ann, best_snn, hist = train_with_compensation(train, w["arch"], cfg, cal, test)
                cache[name, seed, calibrated] = dict(best_ann=best_ann, best_snn=best_snn, history=hist, test=test)
    return cache


def test_1_exact_conversion(record_criterion):
    gen = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst, oracle_mismatch, nets = 0.0, 0, 0
    for i in range(200):
        T = (2, 4, 8)[i % 3]
        lam = float(gen.uniform(0.25, 4.0))
        net, x = bounded_single_layer(gen, int(gen.integers(2, 9)), int(gen.integers(2, 13)), lam, T, 32)
        trace = ann_trace(net, x, "eval")
        assert trace.pre[0].min() >= 0 and trace.pre[0].max() <= np.float32(lam)
        out = snn_forward(convert(net), x, T)
        worst = max(worst, float(np.abs(out.phi[0].astype(np.float64) - trace.acts[0]).max()))
        theta = float(np.float32(lam))
        for z, c in zip(trace.pre[0].ravel().tolist(), out.spike_counts[0].ravel().tolist()):
            oracle_mismatch += scalar_if_count(z, theta, T) != c
        nets += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and oracle_mismatch == 0 and elapsed < 10
    record_criterion("1. exact conversion equivalence", ok,
                     f"{nets} nets, max|phi-a|={worst:.2e}, scalar-oracle mismatches={oracle_mismatch}, {elapsed:.2f}s")
    assert ok


def test_2_conservation_audit(record_criterion):
    gen = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst, checks = 0.0, 0
    for i in range(50):
        if i % 2 == 0:
            depth = int(gen.integers(3, 6))  # parameterized layers, output included
            widths = [int(gen.integers(2, 10)) for _ in range(depth)]
            net = random_mlp(gen, widths, classes=int(gen.integers(2, 5)))
            x = gen.normal(0, 1.5, size=(8, widths[0])).astype(np.float32)
        else:
            channels = (1,) + tuple(int(gen.integers(1, 5)) for _ in range(int(gen.integers(2, 4))))
            net = random_cnn(gen, channels=channels, hw=4)
            x = gen.normal(0, 1.5, size=(8, 1, 4, 4)).astype(np.float32)
        snn = convert(net)
        for T in (1, 2, 4, 8, 16):
            for r in eq5_audit(snn, x, T):
                worst = max(worst, float(np.abs(r).max()))
                checks += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed < 30
    record_criterion("2. conservation audit", ok, f"{checks} layer audits, max residual {worst:.2e}, {elapsed:.2f}s")
    assert ok


def test_3_theorem1_grid(record_criterion):
    t0 = time.perf_counter()
    rows = theorem1_grid(n_samples=100_000, seed=0)
    elapsed = time.perf_counter() - t0
    passed = sum(r["passed"] for r in rows)
    worst = max(abs(r["mean"]) / r["stderr"] if r["stderr"] > 0 else 0.0 for r in rows)
    ok = len(rows) == 48 and passed == 48 and elapsed < 60
    record_criterion("3. zero-mean conversion error (Monte Carlo)", ok,
                     f"{passed}/48 configs within 4 stderr, worst |mean|/stderr={worst:.2f}, {elapsed:.2f}s")
    assert ok


def test_4_nq_degeneracy(record_criterion):
    gen = np.random.default_rng(4)
    z = (gen.standard_normal(1_000_000) * gen.choice([0.1, 1.0, 10.0], 1_000_000)).astype(np.float32)
    mismatches = 0
    for k, (lam, levels) in enumerate([(1.0, 4), (0.37, 3), (8.0, 16), (2.5, 1)]):
        p = QuantActParams(lam=lam, L=levels, delta=0.0)
        a = nq_forward(z, p, RandomSource(k))
        b = qcfs_forward(z, p)
        mismatches += int(np.sum(a.view(np.uint32) != b.view(np.uint32)))
    ok = mismatches == 0
    record_criterion("4. NQ degeneracy at delta=0", ok, f"4 x 1e6 inputs, {mismatches} differing bit patterns")
    assert ok


def _symmetry(run):
    ann, snn, test = run["best_ann"], run["best_snn"], run["test"]
    stats = measure_residual(ann, snn, test, TAU)
    layers = []
    for m, s in zip(stats.means, stats.stds):
        # a layer with no residual at all (std = mean = 0) is perfectly symmetric
        layers.append((m, s, (m == 0 and s == 0) or abs(m) < 0.1 * s))
    return layers


def test_5_residual_symmetry(runs, record_criterion):
    # declared workload: digits conv net (4 weight layers), trained as a plain
    # QCFS model (delta pinned), seed 0, test split, tau = L = 4
    primary = _symmetry(runs["digits", 0, False])
    ok = all(flag for _, _, flag in primary) and any(s > 0.01 for _, s, _ in primary)
    detail = "seed0 " + " ".join(f"L{i + 1}:|m|/s={abs(m) / s if s else 0:.3f}" for i, (m, s, _) in enumerate(primary))
    others = []
    for seed in (1, 2):
        lay = _symmetry(runs["digits", seed, False])
        others.append(f"seed{seed} max|m|/s={max(abs(m) / s if s else 0 for m, s, _ in lay):.3f}")
    record_criterion("5. residual distribution symmetric", ok, detail + "; " + ", ".join(others))
    assert ok


def test_6_protocol_exactness(runs, record_criterion):
    checked, bad = 0, []
    for (name, seed, calibrated), run in runs.items():
        if not calibrated:
            continue
        recs = run["history"].records
        if any(d != 0.0 for d in recs[0].delta):
            bad.append((name, seed, 1))
        for prev, cur in zip(recs, recs[1:]):
            checked += 1
            if np.max(np.abs(np.array(cur.delta) - np.array(prev.measured_std))) > 1e-6:
                bad.append((name, seed, cur.epoch))
    ok = not bad
    record_criterion("6. calibration protocol exactness", ok, f"{checked} epoch transitions, {len(bad)} violations")
    assert ok


def test_7_calibration_benefit(runs, record_criterion):
    details, ok = [], True
    for name in WORKLOADS:
        wins, ann_drop = 0, []
        for seed in SEEDS:
            cal, pin = runs[name, seed, True]["history"], runs[name, seed, False]["history"]
            c = cal.records[cal.best_snn_epoch - 1]
            p = pin.records[pin.best_snn_epoch - 1]
            wins += c.snn_acc >= p.snn_acc
            ann_drop.append(100 * (p.ann_acc - c.ann_acc))
        drop = float(np.mean(ann_drop))
        ok &= wins >= 3 and drop <= 2.0
        details.append(f"{name}: {wins}/5 seeds calibrated>=pinned, ANN drop {drop:+.2f} pts")
    record_criterion("7. calibration benefit", ok, "; ".join(details))
    assert ok


def _rec(epoch, ann, snn):
    return EpochRecord(epoch, ann, snn, [0.0], None, None, 0.0, 0.0, 0.0, 0.0, 0.0)


def test_8_checkpoint_selection(runs, record_criterion):
    synthetic = TrainingHistory([_rec(1, 0.60, 0.40), _rec(2, 0.95, 0.55), _rec(3, 0.90, 0.70), _rec(4, 0.93, 0.65)])
    ok = synthetic.best_snn_epoch == 3 and synthetic.best_ann_epoch == 2
    real_ok, differ = True, 0
    for key, run in runs.items():
        hist = run["history"]
        best = max(r.snn_acc for r in hist.records)
        real_ok &= evaluate_snn(run["best_snn"], run["test"], TAU) == best
        differ += hist.best_snn_epoch != hist.best_ann_epoch
    ok &= real_ok
    record_criterion("8. checkpoint selection", ok,
                     f"synthetic ok={synthetic.best_snn_epoch == 3}, {len(runs)} real runs re-evaluated ok={real_ok}, "
                     f"ANN-best != SNN-best in {differ} runs")
    assert ok


def test_9_overhead(runs, record_criterion):
    ratios = []
    for seed in SEEDS:
        cal = runs["digits", seed, True]["history"].records
        pin = runs["digits", seed, False]["history"].records
        t_cal = np.mean([r.train_seconds + r.calibration_seconds for r in cal])
        t_pin = np.mean([r.train_seconds + r.calibration_seconds for r in pin])
        ratios.append(t_cal / t_pin)
    ratio = float(np.mean(ratios))
    ok = ratio <= 2.0
    record_criterion("9. calibration overhead", ok,
                     f"digits conv net per-epoch time ratio {ratio:.3f} (per seed {', '.join(f'{r:.2f}' for r in ratios)})")
    assert ok


def test_10_grid_property(runs, record_criterion, grid_monitor):
    # fresh simulations at many T, then the session-wide monitor (which has seen
    # every simulation run by the suite so far)
    gen = np.random.default_rng(10)
    local_ok = True
    for T in (1, 2, 3, 4, 7, 16, 32, 64):
        snn = convert(random_cnn(gen, channels=(1, 4, 3)))
        out = snn_forward(snn, gen.normal(0, 2, size=(16, 1, 4, 4)).astype(np.float32), T)
        local_ok &= all(on_grid(phi, theta, T) for phi, theta in zip(out.phi, snn.thetas))
    ok = local_ok and grid_monitor.ok
    record_criterion("10. phi on the theta/T grid", ok,
                     f"{grid_monitor.calls} simulations, {grid_monitor.elements} phi values, "
                     f"worst deviation {grid_monitor.worst:.2e}")
    assert ok
