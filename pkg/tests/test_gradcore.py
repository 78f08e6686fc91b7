"""
Tests for the reverse-mode autodiff core.

Covers forward values of each primitive, the narrow broadcasting rule,
chain-rule gradients, detach semantics and the finite-difference checker.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adaprl.errors import DomainError, NonFiniteError, ShapeError
from adaprl.gradcore import (
    Graph,
    Primitive,
    absolute,
    clamp,
    detach,
    exp,
    grad_check,
    log,
    masked_weighted_sum,
    outer_diff,
    reduce_mean,
    reduce_sum,
    relu,
    softplus,
    sqrt,
    square,
    take,
)

finite = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False, allow_infinity=False)

# ---------------------------------------------------------------------------
# Forward values
# ---------------------------------------------------------------------------


class TestForward:
    def test_outer_difference(self):
        g = Graph()
        out = outer_diff(g.constant([1.0, 2.0, 4.0]))
        np.testing.assert_array_equal(out.value, [[0, -1, -3], [1, 0, -2], [3, 2, 0]])

    def test_detach_is_identity_forward(self):
        g = Graph()
        x = g.leaf([0.5, -2.0, 7.0])
        np.testing.assert_array_equal(detach(x).value, x.value)

    def test_root_mean_square(self):
        g = Graph()
        out = sqrt(reduce_mean(square(g.constant([3.0, 4.0]))))
        assert float(out.value) == pytest.approx(3.5355339059327378, abs=1e-15)

    def test_scalar_broadcast(self):
        g = Graph()
        out = g.constant([1.0, 2.0]) + g.constant(3.0)
        np.testing.assert_array_equal(out.value, [4.0, 5.0])

    def test_python_number_scales(self):
        g = Graph()
        x = g.leaf([1.0, -2.0])
        assert g.primitive(x * 2) is Primitive.SCALE
        assert g.primitive(x / 4.0) is Primitive.SCALE
        np.testing.assert_array_equal((x / 4.0).value, [0.25, -0.5])

    def test_masked_weighted_sum_uses_mask(self):
        g = Graph()
        out = masked_weighted_sum(g.constant([1.0, 2.0, 3.0]), [1.0, 10.0, 100.0], [True, False, True])
        assert float(out.value) == 301.0

    def test_take_gathers_row_major(self):
        g = Graph()
        x = g.constant([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(take(x, [[3, 0], [1, 1]]).value, [[4.0, 1.0], [2.0, 2.0]])

    def test_values_are_read_only(self):
        g = Graph()
        x = g.leaf([1.0, 2.0])
        with pytest.raises(ValueError):
            x.value[0] = 5.0

    def test_clamp(self):
        g = Graph()
        np.testing.assert_array_equal(clamp(g.constant([-50.0, 0.0, 50.0]), -10, 10).value, [-10.0, 0.0, 10.0])


# ---------------------------------------------------------------------------
# Rejections
# ---------------------------------------------------------------------------


class TestRejections:
    def test_shape_mismatch_names_primitive_and_shapes(self):
        g = Graph()
        with pytest.raises(ShapeError, match=r"add.*\(2,\).*\(3,\)"):
            _ = g.constant([1.0, 2.0]) + g.constant([1.0, 2.0, 3.0])

    def test_matmul_inner_mismatch(self):
        g = Graph()
        with pytest.raises(ShapeError, match="matmul"):
            _ = g.constant(np.ones((2, 3))) @ g.constant(np.ones((2, 3)))

    def test_log_of_non_positive(self):
        g = Graph()
        with pytest.raises(DomainError, match="log"):
            log(g.constant([1.0, 0.0]))

    def test_sqrt_of_negative(self):
        g = Graph()
        with pytest.raises(DomainError, match="sqrt"):
            sqrt(g.constant([-1e-3]))

    def test_overflow_is_non_finite(self):
        g = Graph()
        with pytest.raises(NonFiniteError):
            exp(g.constant([1000.0]))

    def test_nan_input_rejected(self):
        g = Graph()
        with pytest.raises(NonFiniteError):
            g.leaf([np.nan])

    def test_non_scalar_root(self):
        g = Graph()
        x = g.leaf([1.0, 2.0])
        with pytest.raises(ShapeError, match="scalar"):
            g.backward(square(x))

    def test_nodes_of_other_graphs(self):
        a, b = Graph(), Graph()
        with pytest.raises(ShapeError, match="another graph"):
            _ = a.leaf([1.0]) + b.leaf([1.0])

    def test_take_out_of_range(self):
        g = Graph()
        with pytest.raises(DomainError, match="index"):
            take(g.constant([1.0, 2.0]), [2])

    def test_unknown_primitive(self):
        g = Graph()
        with pytest.raises(ValueError):
            g.forward("convolve", (g.constant([1.0]),))


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


class TestBackward:
    def test_square(self):
        g = Graph()
        x = g.leaf([3.0])
        grads = g.backward(reduce_sum(square(x)))
        np.testing.assert_array_equal(grads[x], [6.0])

    def test_detach_blocks_one_factor(self):
        g = Graph()
        x = g.leaf([2.0])
        grads = g.backward(reduce_sum(detach(x) * x))
        np.testing.assert_array_equal(grads[x], [2.0])

    def test_abs_sign_rule(self):
        g = Graph()
        x = g.leaf([-1.5, 0.0, 2.0])
        grads = g.backward(reduce_sum(absolute(x)))
        np.testing.assert_array_equal(grads[x], [-1.0, 0.0, 1.0])

    def test_unused_leaf_gets_zeros(self):
        g = Graph()
        x = g.leaf([1.0, 2.0])
        unused = g.leaf(np.ones((2, 2)))
        grads = g.backward(reduce_sum(x))
        np.testing.assert_array_equal(grads[unused], np.zeros((2, 2)))

    def test_take_accumulates_repeats(self):
        g = Graph()
        x = g.leaf([1.0, 2.0, 3.0])
        grads = g.backward(reduce_sum(take(x, [0, 0, 2, 0])))
        np.testing.assert_array_equal(grads[x], [3.0, 0.0, 1.0])

    def test_constants_get_no_gradient(self):
        g = Graph()
        x = g.leaf([1.0])
        c = g.constant([4.0])
        grads = g.backward(reduce_sum(x * c))
        assert list(grads) == [x]

    def test_relu_gate(self):
        g = Graph()
        x = g.leaf([-1.0, 2.0])
        np.testing.assert_array_equal(g.backward(reduce_sum(relu(x)))[x], [0.0, 1.0])

    def test_outer_diff_gradient(self):
        g = Graph()
        x = g.leaf([1.0, 2.0, 4.0])
        weights = np.arange(9.0).reshape(3, 3)
        grads = g.backward(masked_weighted_sum(outer_diff(x), weights))
        np.testing.assert_allclose(grads[x], weights.sum(axis=1) - weights.sum(axis=0))


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


class TestGradCheck:
    @pytest.mark.parametrize(
        "fn",
        [
            lambda g, x: reduce_sum(exp(x) * x),
            lambda g, x: reduce_mean(softplus(x) + square(x)),
            lambda g, x: reduce_sum(log(square(x) + 1.0)),
            lambda g, x: sqrt(reduce_mean(square(x)) + 0.5),
            lambda g, x: reduce_sum(x / (square(x) + 2.0)),
            lambda g, x: reduce_sum(take(x, [[0, 1], [1, 2]]) @ g.constant([[1.0], [-2.0]])),
        ],
        ids=["exp", "softplus", "log", "sqrt", "divide", "take-matmul"],
    )
    def test_smooth_functions(self, fn):
        point = np.array([0.3, -0.7, 1.1])
        assert grad_check(fn, point) <= 1e-6

    def test_rejects_detach(self):
        with pytest.raises(DomainError, match="detach"):
            grad_check(lambda g, x: reduce_sum(detach(x)), [1.0, 2.0])

    def test_rejects_bad_step(self):
        with pytest.raises(DomainError):
            grad_check(lambda g, x: reduce_sum(x), [1.0], step=0.0)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.integers(1, 6), elements=finite))
    def test_random_points(self, point):
        fn = lambda g, x: reduce_mean(softplus(x) * exp(x * 0.3) + square(x))  # noqa: E731
        assert grad_check(fn, point) <= 1e-4

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.integers(1, 8), elements=finite))
    def test_outer_diff_antisymmetric(self, values):
        g = Graph()
        out = outer_diff(g.constant(values)).value
        np.testing.assert_array_equal(out, -out.T)
        assert not np.any(np.diag(out))
