import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from snnforge.activation import QuantActParams, act_backward, nq_forward, qcfs_forward, relu
from snnforge.errors import NonFinite, ShapeMismatch
from snnforge.tensor import RandomSource

finite = st.floats(-50, 50, width=32)
params = st.builds(
    QuantActParams,
    lam=st.floats(0.0625, 16, width=32),
    L=st.integers(1, 64),
    delta=st.just(0.0),
)


def qcfs_scalar(z, lam, L):
    """Direct evaluation of the staircase in float64."""
    return lam * min(max(math.floor(z * L / lam + 0.5) / L, 0.0), 1.0)


class TestQcfs:
    p = QuantActParams(lam=1.0, L=4)

    def test_zero(self):
        assert qcfs_forward(np.float32(0.0), self.p) == 0.0

    def test_hand_evaluated(self):
        assert qcfs_forward(np.float32(0.3), self.p) == 0.25

    def test_saturation(self):
        assert qcfs_forward(np.float32(2.0), self.p) == 1.0

    @pytest.mark.parametrize("L", [2, 4, 6, 8, 16])
    @pytest.mark.parametrize("lam", [1.0, 0.5, 3.0, 8.0])
    def test_half_lambda_even_L(self, lam, L):
        p = QuantActParams(lam=lam, L=L)
        assert qcfs_forward(np.float32(lam / 2), p) == np.float32(lam / 2)

    def test_matches_scalar_reference(self):
        gen = np.random.default_rng(0)
        z = gen.uniform(-1, 3, 500).astype(np.float32)
        p = QuantActParams(lam=1.7, L=5)
        out = qcfs_forward(z, p)
        ref = [qcfs_scalar(float(v), float(np.float32(1.7)), 5) for v in z]
        np.testing.assert_allclose(out, ref, atol=1e-6)

    def test_non_finite(self):
        with pytest.raises(NonFinite):
            qcfs_forward(np.array([0.1, np.nan]), self.p)

    @given(arrays(np.float32, st.integers(1, 50), elements=finite), params)
    def test_output_on_grid(self, z, p):
        out = qcfs_forward(z, p)
        k = out.astype(np.float64) * p.L / p.lam
        assert np.all(np.abs(k - np.round(k)) < 1e-4)
        assert np.all(out >= 0) and np.all(out <= np.float32(p.lam))

    @given(arrays(np.float32, st.integers(2, 50), elements=finite), params)
    def test_monotone(self, z, p):
        z = np.sort(z)
        assert np.all(np.diff(qcfs_forward(z, p)) >= 0)

    def test_unbiased_on_uniform_inputs(self):
        rs = RandomSource(3)
        lam = 2.0
        z = rs.generator.uniform(0, lam, 400_000).astype(np.float32)
        err = qcfs_forward(z, QuantActParams(lam=lam, L=4)).astype(np.float64) - z
        se = err.std() / np.sqrt(len(z))
        assert abs(err.mean()) < 4 * se


class TestNq:
    def test_zero_delta_is_qcfs_bitwise(self):
        z = np.random.default_rng(1).normal(0, 2, 10_000).astype(np.float32)
        p = QuantActParams(lam=1.3, L=4, delta=0.0)
        a = nq_forward(z, p, RandomSource(0))
        b = qcfs_forward(z, p)
        assert a.tobytes() == b.tobytes()

    def test_noise_moments(self):
        n = 100_000
        p = QuantActParams(lam=1.0, L=4, delta=0.1)
        out = nq_forward(np.full(n, 0.3, np.float32), p, RandomSource(7)).astype(np.float64)
        assert abs(out.mean() - 0.25) <= 3 * 0.1 / np.sqrt(n)
        assert out.std() == pytest.approx(0.1, rel=0.02)

    def test_fresh_noise_each_call(self):
        rs = RandomSource(2)
        p = QuantActParams(lam=1.0, L=4, delta=0.1)
        z = np.zeros(16, np.float32)
        assert not np.array_equal(nq_forward(z, p, rs), nq_forward(z, p, rs))


class TestBackward:
    p = QuantActParams(lam=2.0, L=4)

    def test_interior_passes_through(self):
        gz, gl = act_backward(np.array([0.5, 1.9], np.float32), self.p, np.array([3.0, -1.0], np.float32))
        assert gz.tolist() == [3.0, -1.0] and gl == 0.0

    def test_dead_region(self):
        gz, gl = act_backward(np.array([-0.5, 0.0], np.float32), self.p, np.ones(2, np.float32))
        assert gz.tolist() == [0.0, 0.0] and gl == 0.0

    def test_saturated_feeds_lambda(self):
        gz, gl = act_backward(np.array([3.0, 2.0], np.float32), self.p, np.array([0.7, 0.3], np.float32))
        assert gz.tolist() == [0.0, 0.0]
        assert gl == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            act_backward(np.zeros(3), self.p, np.zeros(4))


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            QuantActParams(lam=0.0)
        with pytest.raises(ValueError):
            QuantActParams(L=0)
        with pytest.raises(ValueError):
            QuantActParams(delta=-0.1)

    def test_lambda_clamp(self):
        p = QuantActParams(lam=1.0)
        p.set_lambda(-5.0)
        assert p.lam == pytest.approx(1e-3)

    def test_values_are_float32_exact(self):
        p = QuantActParams(lam=0.1, delta=0.3)
        assert p.lam == float(np.float32(0.1)) and p.delta == float(np.float32(0.3))


def test_relu():
    assert relu(np.array([-1.0, 0.0, 2.5])).tolist() == [0.0, 0.0, 2.5]
