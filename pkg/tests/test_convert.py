import numpy as np
import pytest

from snnforge.activation import qcfs_forward
from snnforge.ann import NetworkDef, ann_trace
from snnforge.convert import convert
from snnforge.errors import UnfinalizedParams
from snnforge.snn import snn_forward
from tests.nets import act, bounded_single_layer, dense, random_cnn, random_mlp


def test_identity_mapping():
    snn = convert(NetworkDef([dense([[1.0]]), act(1.0, 4), dense([[1.0]])], (1,), 1))
    assert snn.thetas == [1.0]
    assert snn.states[0].v0.tolist() == [[0.5]]


def test_weights_copied_bitwise_and_independent():
    gen = np.random.default_rng(0)
    ann = random_cnn(gen)
    snn = convert(ann)
    src = [layer for layer in ann.layers if layer.weight is not None]
    dst = [layer for stage in snn.stages for layer in stage.layers if layer.weight is not None]
    assert len(src) == len(dst)
    for a, b in zip(src, dst):
        assert a.weight.tobytes() == b.weight.tobytes() and a.bias.tobytes() == b.bias.tobytes()
        assert a.weight is not b.weight
    assert snn.thetas == [p.lam for p in ann.act_params]


def test_delta_is_discarded():
    gen = np.random.default_rng(1)
    ann = random_mlp(gen, [3, 5, 4])
    noisy = ann.copy()
    for p in noisy.act_params:
        p.set_delta(0.3)
    x = gen.normal(size=(6, 3)).astype(np.float32)
    a = snn_forward(convert(ann), x, 5)
    b = snn_forward(convert(noisy), x, 5)
    assert a.logits.tobytes() == b.logits.tobytes()


def test_deterministic():
    gen = np.random.default_rng(2)
    ann = random_mlp(gen, [4, 6, 6])
    x = gen.normal(size=(5, 4)).astype(np.float32)
    s1, s2 = convert(ann), convert(ann)
    assert s1.thetas == s2.thetas
    assert snn_forward(s1, x, 4).logits.tobytes() == snn_forward(s2, x, 4).logits.tobytes()


def test_unfinalized_lambda():
    ann = NetworkDef([dense([[1.0]]), act(1.0, 4), dense([[1.0]])], (1,), 1)
    ann.act_params[0].lam = 0.0  # bypass the setter on purpose
    with pytest.raises(UnfinalizedParams):
        convert(ann)


@pytest.mark.parametrize("L", [2, 4, 8])
def test_exact_equivalence_at_T_equals_L(L):
    gen = np.random.default_rng(L)
    for _ in range(10):
        lam = float(gen.uniform(0.5, 3))
        net, x = bounded_single_layer(gen, 6, 10, lam, L, 32)
        trace = ann_trace(net, x, "eval")
        out = snn_forward(convert(net), x, L)
        assert float(np.abs(out.phi[0] - trace.acts[0]).max()) <= 1e-5


def test_equivalence_matches_qcfs_on_currents():
    gen = np.random.default_rng(3)
    net, x = bounded_single_layer(gen, 4, 8, 1.0, 4, 20)
    trace = ann_trace(net, x, "eval")
    assert np.array_equal(trace.acts[0], qcfs_forward(trace.pre[0], net.act_params[0]))
