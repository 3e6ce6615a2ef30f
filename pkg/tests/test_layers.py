import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polcvnn import layers as L

from conftest import random_complex
from oracles import (conv3d_loops, layer_gradchecks, matmul_loops, real_conv3d_loops,
                     se_reference, softmax_direct, within)


class TestConv:
    def test_against_loop_oracle(self, rng):
        x = random_complex(rng, (1, 4, 4, 3, 2))
        w, b = random_complex(rng, (3, 3, 3, 2, 2)), random_complex(rng, 2)
        assert np.max(np.abs(L.complex_conv3d(x, w, b) - conv3d_loops(x, w, b))) < 1e-10

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), b=st.integers(1, 2), h=st.integers(1, 5),
           w=st.integers(1, 5), d=st.integers(1, 4), cin=st.integers(1, 3),
           cout=st.integers(1, 3), k=st.sampled_from([1, 3, 5]))
    def test_random_shapes(self, seed, b, h, w, d, cin, cout, k):
        rng = np.random.default_rng(seed)
        x = random_complex(rng, (b, h, w, d, cin))
        weight, bias = random_complex(rng, (k, k, k, cin, cout)), random_complex(rng, cout)
        got = L.complex_conv3d(x, weight, bias)
        assert got.shape == (b, h, w, d, cout)
        assert np.max(np.abs(got - conv3d_loops(x, weight, bias))) < 1e-10

    def test_real_inputs_reduce_to_real_convolution(self, rng):
        x = rng.standard_normal((1, 4, 5, 3, 1))
        k = rng.standard_normal((3, 3, 3, 1, 1))
        y = L.complex_conv3d(x + 0j, k + 0j, np.array([0.5 + 0j]))
        assert np.all(y.imag == 0)
        np.testing.assert_allclose(y.real[0, ..., 0],
                                   real_conv3d_loops(x[0, ..., 0], k[..., 0, 0], 0.5), atol=1e-12)

    def test_multiply_by_i(self):
        y = L.complex_conv3d(np.full((1, 1, 1, 1, 1), 2 + 3j),
                             np.full((1, 1, 1, 1, 1), 1j), np.zeros(1, complex))
        assert y.item() == -3 + 2j

    def test_split_form(self, rng):
        """Re/Im parts follow the four real correlations."""
        x = random_complex(rng, (1, 3, 4, 2, 2))
        w, b = random_complex(rng, (3, 3, 3, 2, 1)), random_complex(rng, 1)
        y = L.complex_conv3d(x, w, b)[0, ..., 0]

        def rc(a, k):
            return sum(real_conv3d_loops(a[0, ..., i], k[..., i, 0], 0.0) for i in range(2))

        np.testing.assert_allclose(y.real, rc(x.real, w.real) - rc(x.imag, w.imag) + b.real[0],
                                   atol=1e-12)
        np.testing.assert_allclose(y.imag, rc(x.real, w.imag) + rc(x.imag, w.real) + b.imag[0],
                                   atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError, match="shape error"):
            L.complex_conv3d(random_complex(rng, (1, 3, 3, 3, 2)),
                             random_complex(rng, (3, 3, 3, 4, 1)), np.zeros(1, complex))

    def test_linearity(self, rng):
        x1, x2 = random_complex(rng, (2, 4, 3, 3, 2)), random_complex(rng, (2, 4, 3, 3, 2))
        w, zero = random_complex(rng, (3, 3, 3, 2, 3)), np.zeros(3, complex)
        a = 0.7 - 1.3j
        lhs = L.complex_conv3d(a * x1 + x2, w, zero)
        rhs = a * L.complex_conv3d(x1, w, zero) + L.complex_conv3d(x2, w, zero)
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_conjugate_symmetry(self, rng):
        x, w = random_complex(rng, (1, 4, 4, 3, 2)), random_complex(rng, (3, 3, 3, 2, 2))
        zero = np.zeros(2, complex)
        lhs = L.complex_conv3d(x, w, zero)
        rhs = np.conj(L.complex_conv3d(np.conj(x), np.conj(w), zero))
        assert np.max(np.abs(lhs - rhs)) < 1e-10


class TestCrelu:
    @pytest.mark.parametrize("z,expected", [(1 + 2j, 1 + 2j), (-1 + 2j, 2j), (-3 - 4j, 0)])
    def test_values(self, z, expected):
        assert L.crelu(np.array([z]))[0] == expected

    def test_gradient_paths(self):
        assert L.crelu_backward(np.array([1 + 1j]), np.array([-1 + 2j]))[0] == 1j

    def test_idempotent(self, rng):
        x = random_complex(rng, (50,))
        assert np.array_equal(L.crelu(L.crelu(x)), L.crelu(x))


class TestSE:
    def test_zero_weights_halve(self, rng):
        u = random_complex(rng, (2, 3, 3, 2, 8))
        np.testing.assert_allclose(L.se_block(u, np.zeros((2, 8)), np.zeros((8, 2))), u / 2)

    def test_zero_input(self, rng):
        u = np.zeros((1, 2, 2, 2, 4), complex)
        out, (z, _, _, s) = L.se_block_forward(u, rng.standard_normal((2, 4)),
                                               rng.standard_normal((4, 2)))
        assert not z.any() and np.all(s == 0.5) and not out.any()

    def test_scalar_reference(self, rng):
        u = random_complex(rng, (2, 3, 4, 2, 8))
        w1, w2 = rng.standard_normal((2, 8)), rng.standard_normal((8, 2))
        assert np.max(np.abs(L.se_block(u, w1, w2) - se_reference(u, w1, w2))) < 1e-10

    def test_gates_and_homogeneity(self, rng):
        u = random_complex(rng, (2, 3, 3, 3, 4))
        w1, w2 = rng.standard_normal((1, 4)), rng.standard_normal((4, 1))
        out, (z, _, _, s) = L.se_block_forward(u, w1, w2)
        assert out.shape == u.shape and np.all((s > 0) & (s < 1))
        _, (z3, _, _, _) = L.se_block_forward(3.0 * u, w1, w2)
        np.testing.assert_allclose(z3, 3.0 * z, rtol=1e-13)

    def test_bad_reduction(self, rng):
        with pytest.raises(ValueError, match="bad reduction"):
            L.se_block(random_complex(rng, (1, 2, 2, 2, 6)), np.zeros((4, 6)), np.zeros((6, 4)))


class TestConcat:
    def test_three_branches(self, rng):
        xs = [random_complex(rng, (2, 13, 13, 6, 16)) for _ in range(3)]
        y = L.concat_channels(xs)
        assert y.shape == (2, 13, 13, 6, 48)
        for i, x in enumerate(xs):
            assert np.array_equal(y[..., 16 * i:16 * (i + 1)], x)

    def test_single_identity(self, rng):
        x = random_complex(rng, (1, 2, 2, 2, 3))
        assert np.array_equal(L.concat_channels([x]), x)

    def test_mismatch(self, rng):
        with pytest.raises(ValueError, match="dimension mismatch"):
            L.concat_channels([random_complex(rng, (1, 2, 2, 2, 3)),
                               random_complex(rng, (1, 3, 2, 2, 3))])


class TestDense:
    def test_identity(self, rng):
        x = random_complex(rng, (3, 4))
        np.testing.assert_array_equal(L.dense(x, np.eye(4) + 0j, np.zeros(4, complex)), x)

    def test_times_i(self):
        assert L.dense(np.array([[2 + 0j]]), np.array([[1j]]), np.zeros(1, complex))[0, 0] == 2j

    def test_loop_oracle(self, rng):
        x, w, b = random_complex(rng, (4, 9)), random_complex(rng, (9, 5)), random_complex(rng, 5)
        assert np.max(np.abs(L.dense(x, w, b) - matmul_loops(x, w, b))) < 1e-10

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="shape mismatch"):
            L.dense(random_complex(rng, (2, 3)), random_complex(rng, (4, 2)), np.zeros(2))


class TestDropout:
    def test_rate_zero(self, rng):
        x = random_complex(rng, (5,))
        assert np.array_equal(L.dropout(x, 0.0, 1, training=True), x)
        assert np.array_equal(L.dropout(x, 0.0, 1, training=False), x)

    def test_inference_identity(self, rng):
        x = random_complex(rng, (5,))
        assert np.array_equal(L.dropout(x, 0.25, 1, training=False), x)

    def test_mask_shared_by_parts(self, rng):
        y = L.dropout(np.full(1000, 1 + 1j), 0.5, 3)
        assert np.array_equal(y.real, y.imag)
        assert set(np.unique(y.real)) == {0.0, 2.0}

    def test_unbiased(self):
        trials = 10_000
        y = L.dropout(np.full(trials, 1.5 - 0.5j), 0.5, seed=42)
        # each draw is 0 or 2x with prob 1/2: sd per draw = |x|
        sigma = abs(1.5 - 0.5j) / math.sqrt(trials)
        assert abs(y.mean() - (1.5 - 0.5j)) < 3 * sigma

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            L.dropout(np.ones(2), 1.0, 0)


class TestHead:
    def test_equal_magnitudes(self):
        np.testing.assert_allclose(L.magnitude_softmax(np.array([[3 + 4j, 3 - 4j]])), [[0.5, 0.5]])

    def test_zero_logits(self):
        np.testing.assert_allclose(L.magnitude_softmax(np.zeros((2, 4), complex)), 0.25)

    def test_against_direct_formula(self, rng):
        z = random_complex(rng, (6, 7), 2.0)
        direct = softmax_direct(np.abs(z).astype(np.longdouble))
        assert np.max(np.abs(L.magnitude_softmax(z) - direct.astype(float))) < 1e-12

    def test_rows_sum_to_one(self, rng):
        p = L.magnitude_softmax(random_complex(rng, (20, 15), 30.0))
        assert np.all(p >= 0) and np.max(np.abs(p.sum(axis=1) - 1)) < 1e-12

    def test_magnitude_gradient(self):
        g = L.magnitude_grad(np.array(1.0), np.array(3 + 4j))
        assert (g.real, g.imag) == pytest.approx((0.6, 0.8))

    def test_magnitude_gradient_at_zero_is_finite(self):
        assert L.magnitude_grad(np.array(1.0), np.array(0j)) == 0

    def test_cross_entropy_values(self):
        assert L.cross_entropy(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]])) == 0
        assert L.cross_entropy(np.full((1, 5), 0.2), np.eye(5)[[2]]) == pytest.approx(math.log(5))
        prob = np.array([[0.5, 0.5, 0.0, 0.0], [0.25, 0.25, 0.25, 0.25]])
        y = np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]])
        assert L.cross_entropy(prob, y) == pytest.approx((math.log(2) + math.log(4)) / 2)
        assert L.cross_entropy(prob, y) == pytest.approx(1.0397207708399179)

    def test_cross_entropy_clamp(self):
        assert L.cross_entropy(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]])) == pytest.approx(
            -math.log(1e-12))


class TestInit:
    def test_glorot_complex_limits(self, rng):
        w = L.glorot_complex(rng, (200, 100), 200, 100)
        limit = math.sqrt(6 / 300) / math.sqrt(2)
        assert np.all(np.abs(w.real) <= limit) and np.all(np.abs(w.imag) <= limit)
        assert np.abs(w.real).max() > 0.95 * limit


@pytest.mark.parametrize("seed", range(6))
def test_layer_gradients_match_finite_differences(seed):
    """Central differences at h = 1e-6 with a roundoff-aware absolute floor.

    The floor is 1e-8: float64 differences of O(1) layer outputs carry
    ~1e-15 absolute noise, i.e. ~1e-9 after dividing by 2h.
    """
    for layer, tensors in layer_gradchecks(seed).items():
        for name, pairs in tensors.items():
            assert within(pairs, rtol=1e-6, atol=1e-8), (layer, name, pairs)
