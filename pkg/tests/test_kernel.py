"""Tensor invariants, kernel operations, and the finite-difference oracle."""

import math

import numpy as np
import pytest

from msfk.kernel import (
    ShapeError,
    Tensor,
    add,
    add_bias,
    concat_rows,
    elementwise_max,
    finite_diff_grad,
    layer_norm,
    matmul,
    relu,
    reshape,
    scaled_dot_attention,
    sigmoid,
    softmax_rows,
    transpose,
)
from msfk import gradcheck


class TestTensor:
    def test_scalar_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(3.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            Tensor([1.0, float("nan")])
        with pytest.raises(ValueError):
            Tensor([1.0, float("inf")])

    def test_shape_and_size(self):
        t = Tensor([1, 2, 3, 4, 5, 6], shape=(2, 3))
        assert t.shape == (2, 3)
        assert t.size == 6
        assert t.tolist() == [[1, 2, 3], [4, 5, 6]]
        assert t.data == [1, 2, 3, 4, 5, 6]  # row-major flat view
        assert len(t.data) == t.size

    def test_immutable(self):
        t = Tensor([[1.0, 2.0]])
        with pytest.raises(ValueError):
            t.array[0, 0] = 5.0

    def test_no_broadcasting(self):
        with pytest.raises(ShapeError):
            add(Tensor([[1.0, 2.0]]), Tensor([1.0, 2.0]))


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(eye, m).array, m.array)

    def test_permutation(self):
        m = Tensor([[1.0, 0.0], [0.0, 1.0]])
        p = Tensor([[0.0, 1.0], [1.0, 0.0]])
        assert np.array_equal(matmul(m, p).array, p.array)

    def test_hand_product(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0], [6.0]])
        assert matmul(a, b).tolist() == [[17.0], [39.0]]

    def test_mismatch_names_both_shapes(self):
        a = Tensor(np.zeros((2, 3)))
        b = Tensor(np.zeros((2, 3)))
        with pytest.raises(ShapeError, match=r"\(2, 3\) x \(2, 3\)"):
            matmul(a, b)


class TestSoftmaxRows:
    def test_symmetry(self):
        out = softmax_rows(Tensor([[0.0, 0.0]]))
        assert out.tolist() == [[0.5, 0.5]]

    def test_extreme_magnitude(self):
        out = softmax_rows(Tensor([[1000.0, 1000.0]]))
        assert out.tolist() == [[0.5, 0.5]]

    def test_closed_form(self):
        out = softmax_rows(Tensor([[0.0, math.log(3.0)]]))
        np.testing.assert_allclose(out.array, [[0.25, 0.75]], atol=1e-12)

    def test_rows_sum_to_one_large_entries(self):
        rng = np.random.default_rng(7)
        m = Tensor(rng.uniform(-1e4, 1e4, size=(20, 9)))
        sums = softmax_rows(m).array.sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-6)

    def test_shift_invariance(self):
        rng = np.random.default_rng(8)
        m = rng.standard_normal((5, 4))
        shifted = m + rng.uniform(-50, 50, size=(5, 1))
        np.testing.assert_allclose(
            softmax_rows(Tensor(m)).array, softmax_rows(Tensor(shifted)).array, atol=1e-6
        )

    def test_monotone_row_ordering(self):
        m = Tensor([[0.5, -1.0, 2.0, 0.0]])
        out = softmax_rows(m).array[0]
        assert np.array_equal(np.argsort(out), np.argsort(m.array[0]))


class TestScaledDotAttention:
    def test_single_key_returns_value(self):
        q = Tensor([[1.0, -2.0, 0.5]])
        k = Tensor([[0.3, 0.7, -0.1]])
        v = Tensor([[5.0, 6.0, 7.0]])
        assert scaled_dot_attention(q, k, v).tolist() == v.tolist()

    def test_uniform_weights_give_column_mean(self):
        q = Tensor([[0.0, 0.0]])
        k = Tensor([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]])
        v = Tensor([[3.0, 0.0], [0.0, 6.0], [3.0, 3.0]])
        out = scaled_dot_attention(q, k, v)
        np.testing.assert_allclose(out.array, v.array.mean(axis=0, keepdims=True), atol=1e-12)

    def test_matches_composition_bitwise(self):
        rng = np.random.default_rng(11)
        q = Tensor(rng.standard_normal((4, 5)))
        k = Tensor(rng.standard_normal((6, 5)))
        v = Tensor(rng.standard_normal((6, 5)))
        logits = matmul(q, transpose(k))
        composed = matmul(softmax_rows(Tensor(logits.array / math.sqrt(5))), v)
        assert np.array_equal(scaled_dot_attention(q, k, v).array, composed.array)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            scaled_dot_attention(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))),
                                 Tensor(np.zeros((2, 4))))
        with pytest.raises(ShapeError):
            scaled_dot_attention(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))),
                                 Tensor(np.zeros((3, 3))))


class TestLayerNorm:
    def test_constant_row_collapses(self):
        out = layer_norm(Tensor([[5.0, 5.0, 5.0, 5.0]]))
        np.testing.assert_allclose(out.array, 0.0, atol=1e-12)

    def test_unit_variance_row_fixed(self):
        out = layer_norm(Tensor([[1.0, -1.0]]))
        np.testing.assert_allclose(out.array, [[1.0, -1.0]], atol=1e-4)

    def test_affine_invariance(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((3, 6))
        a, b = 2.5, -7.0
        np.testing.assert_allclose(
            layer_norm(Tensor(a * x + b)).array, layer_norm(Tensor(x)).array, atol=1e-5
        )

    def test_row_moments(self):
        rng = np.random.default_rng(13)
        out = layer_norm(Tensor(rng.uniform(-10, 10, size=(8, 16)))).array
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)

    def test_gain_and_bias(self):
        x = Tensor([[1.0, -1.0]])
        out = layer_norm(x, gain=Tensor([2.0, 2.0]), bias=Tensor([1.0, 1.0]))
        np.testing.assert_allclose(out.array, [[3.0, -1.0]], atol=1e-4)


class TestElementwiseMax:
    def test_tie_breaks_to_first(self):
        a = Tensor([[1.0, 2.0]])
        values, mask = elementwise_max(a, a)
        assert np.array_equal(values.array, a.array)
        assert mask.tolist() == [[0.0, 0.0]]

    def test_definition(self):
        values, mask = elementwise_max(Tensor([0.9, 0.1]), Tensor([0.5, 0.7]))
        assert values.tolist() == [0.9, 0.7]
        assert mask.tolist() == [0.0, 1.0]

    def test_commutes_up_to_mask(self):
        rng = np.random.default_rng(14)
        for _ in range(100):
            a = Tensor(rng.standard_normal((3, 4)))
            b = Tensor(rng.standard_normal((3, 4)))
            assert np.array_equal(elementwise_max(a, b)[0].array,
                                  elementwise_max(b, a)[0].array)

    def test_idempotent(self):
        rng = np.random.default_rng(15)
        a = Tensor(rng.standard_normal((5, 5)))
        values, _ = elementwise_max(a, a)
        assert np.array_equal(values.array, a.array)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            elementwise_max(Tensor([1.0]), Tensor([1.0, 2.0]))


class TestFiniteDiffGrad:
    def test_quadratic(self):
        grad = finite_diff_grad(lambda t: float((t.array ** 2).sum()), Tensor([1.0, 2.0]))
        np.testing.assert_allclose(grad.array, [2.0, 4.0], atol=1e-4)

    def test_bilinear(self):
        grad = finite_diff_grad(lambda t: float(t.array[0] * t.array[1]), Tensor([3.0, 5.0]))
        np.testing.assert_allclose(grad.array, [5.0, 3.0], atol=1e-4)

    def test_softmax_row_sum_is_conserved(self):
        rng = np.random.default_rng(16)
        x = Tensor(rng.standard_normal((3, 4)))
        grad = finite_diff_grad(lambda t: float(softmax_rows(t).array.sum()), x)
        np.testing.assert_allclose(grad.array, 0.0, atol=1e-4)

    def test_step_range_enforced(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda t: 0.0, Tensor([1.0]), h=1e-2)


class TestAnalyticGradients:
    def test_all_checks_within_tolerance(self):
        results = gradcheck.run_checks(seed=0)
        names = {r.name for r in results}
        assert {"sum_fusion", "concat_fusion", "elementwise_max", "affinity",
                "max_fused_logits"} <= names
        for r in results:
            assert r.max_rel_error <= gradcheck.TOLERANCE, r

    def test_multiple_seeds(self):
        for seed in (1, 2, 3):
            assert gradcheck.all_pass(gradcheck.run_checks(seed=seed))

    def test_fault_injection_detected(self):
        results = gradcheck.run_checks(seed=0, inject_fault=True)
        assert not gradcheck.all_pass(results)


class TestMiscOps:
    def test_add_bias(self):
        out = add_bias(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([10.0, 20.0]))
        assert out.tolist() == [[11.0, 22.0], [13.0, 24.0]]

    def test_concat_rows(self):
        out = concat_rows(Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]]))
        assert out.tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_reshape_size_checked(self):
        with pytest.raises(ShapeError):
            reshape(Tensor([1.0, 2.0, 3.0]), (2, 2))

    def test_sigmoid_relu(self):
        assert sigmoid(Tensor([0.0])).tolist() == [0.5]
        assert relu(Tensor([-1.0, 2.0])).tolist() == [0.0, 2.0]
