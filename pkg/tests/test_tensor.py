"""Tensor core: forward semantics, backward rules, and tape behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qamatch import tensor as tt
from qamatch.errors import ContractError, DimensionError, NumericsError
from qamatch.gradcheck import max_relative_error, numeric_gradient
from qamatch.tensor import ComputationTape, Tensor, backward


def T(data, grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


class TestForwardExamples:
    def test_matmul_identity(self):
        a = T(np.eye(2))
        b = T([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(tt.matmul(a, b).data, [[1.0, 2.0], [3.0, 4.0]])

    def test_matmul_1x2_2x1(self):
        out = tt.matmul(T([[1.0, 2.0]]), T([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError) as exc:
            tt.matmul(T(np.zeros((2, 3))), T(np.zeros((2, 3))))
        assert "(2, 3)" in str(exc.value)

    def test_softmax_symmetric_row(self):
        out = tt.softmax_rows(T([[0.0, 0.0]]))
        np.testing.assert_array_equal(out.data, [[0.5, 0.5]])

    def test_softmax_large_inputs_no_overflow(self):
        out = tt.softmax_rows(T([[1000.0, 1000.0, 1000.0]]))
        np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]])

    def test_softmax_against_high_precision_eval(self):
        # Frozen from a 50-digit exp/sum evaluation of softmax([1, 2, 3]).
        expected = [0.090030573170380457998, 0.24472847105479765247, 0.66524095577482188953]
        out = tt.softmax_rows(T([[1.0, 2.0, 3.0]]))
        np.testing.assert_allclose(out.data[0], expected, atol=1e-12, rtol=0)

    def test_sigmoid_zero(self):
        assert tt.sigmoid(T([0.0])).data[0] == 0.5

    def test_relu(self):
        np.testing.assert_array_equal(tt.relu(T([-1.0, 2.0])).data, [0.0, 2.0])

    def test_tanh_zero(self):
        assert tt.tanh(T([0.0])).data[0] == 0.0


class TestBackwardExamples:
    def test_linear_scale(self):
        x = T([2.0], grad=True)
        with ComputationTape() as tape:
            y = tt.scale(x, 3.0)
        backward(y, tape)
        np.testing.assert_array_equal(x.grad, [3.0])

    def test_sum_of_squares(self):
        x = T([1.0, 2.0, 3.0], grad=True)
        with ComputationTape() as tape:
            y = tt.sum(tt.mul(x, x))
        backward(y, tape)
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_matmul_grad_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        a = T(rng.uniform(-1, 1, (3, 3)), grad=True)
        b = T(rng.uniform(-1, 1, (3, 3)))
        with ComputationTape() as tape:
            loss = tt.sum(tt.matmul(a, b))
        backward(loss, tape)
        numeric = numeric_gradient(lambda: float((a.data @ b.data).sum()), a.data, h=1e-5)
        assert max_relative_error(a.grad, numeric) < 1e-6

    def test_tanh_grad_matches_finite_differences(self):
        x = T([0.7], grad=True)
        with ComputationTape() as tape:
            y = tt.sum(tt.tanh(x))
        backward(y, tape)
        numeric = numeric_gradient(lambda: float(np.tanh(x.data).sum()), x.data, h=1e-5)
        assert max_relative_error(x.grad, numeric) < 1e-6

    def test_backward_needs_scalar(self):
        x = T([1.0, 2.0], grad=True)
        with ComputationTape() as tape:
            y = tt.mul(x, x)
        with pytest.raises(ContractError):
            backward(y, tape)

    def test_backward_needs_output_from_this_tape(self):
        x = T([1.0], grad=True)
        with ComputationTape() as tape:
            tt.mul(x, x)
        with pytest.raises(ContractError):
            backward(T([1.0]), tape)

    def test_repeated_backward_accumulates(self):
        x = T([2.0], grad=True)
        with ComputationTape() as tape:
            y = tt.scale(x, 3.0)
        backward(y, tape)
        backward(y, tape)
        np.testing.assert_array_equal(x.grad, [6.0])

    def test_disconnected_output_leaves_other_grads_unchanged(self):
        x = T([1.0], grad=True)
        z = T([5.0], grad=True)
        with ComputationTape() as tape:
            u = tt.scale(x, 2.0)
            v = tt.scale(z, 4.0)
        backward(u, tape)
        assert z.grad is None
        np.testing.assert_array_equal(x.grad, [2.0])
        backward(v, tape)
        np.testing.assert_array_equal(z.grad, [4.0])
        np.testing.assert_array_equal(x.grad, [2.0])

    def test_backward_linearity(self):
        rng = np.random.default_rng(3)
        data = rng.uniform(-1, 1, 4)
        alpha, beta = 1.7, -0.6

        def grads_of(fn):
            x = T(data.copy(), grad=True)
            with ComputationTape() as tape:
                y = fn(x)
            backward(y, tape)
            return x.grad.copy()

        f = lambda x: tt.sum(tt.mul(x, x))
        g = lambda x: tt.sum(tt.tanh(x))
        combined = lambda x: tt.add(tt.scale(f(x), alpha), tt.scale(g(x), beta))
        np.testing.assert_allclose(
            grads_of(combined), alpha * grads_of(f) + beta * grads_of(g), rtol=1e-12
        )


class TestInvariants:
    def test_rank_bounds(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 2, 2, 2)))

    def test_non_finite_rejected_at_construction(self):
        with pytest.raises(NumericsError):
            Tensor([np.inf, 1.0])
        with pytest.raises(NumericsError):
            Tensor([np.nan])

    def test_sqrt_of_negative_rejected(self):
        with pytest.raises(NumericsError):
            tt.sqrt(T([-1.0]))

    def test_div_by_zero_rejected(self):
        with pytest.raises(NumericsError):
            tt.div(T([1.0]), T([0.0]))

    def test_grad_shape_matches_data(self):
        x = T(np.ones((2, 3)), grad=True)
        with ComputationTape() as tape:
            y = tt.sum(x)
        backward(y, tape)
        assert x.grad.shape == x.data.shape

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=6), st.integers(1, 4))
    @settings(max_examples=60, deadline=None)
    def test_softmax_rows_sum_to_one(self, values, rows):
        x = T(np.tile(np.asarray(values), (rows, 1)))
        out = tt.softmax_rows(x).data
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(out >= 0.0) and np.all(out <= 1.0)

    @given(
        st.integers(1, 4),
        st.integers(1, 4),
        st.integers(2, 5),
        st.integers(0, 1),
    )
    @settings(max_examples=50, deadline=None)
    def test_concat_then_slice_is_identity(self, m, k, n, axis):
        rng = np.random.default_rng(m * 100 + k * 10 + n)
        if axis == 0:
            a, b = rng.normal(size=(m, n)), rng.normal(size=(k, n))
            split = m
        else:
            a, b = rng.normal(size=(n, m)), rng.normal(size=(n, k))
            split = m
        ta, tb = T(a), T(b)
        joined = tt.concat(ta, tb, axis=axis)
        back_a = tt.slice_range(joined, 0, split, axis=axis)
        back_b = tt.slice_range(joined, split, split + k, axis=axis)
        np.testing.assert_array_equal(back_a.data, a)
        np.testing.assert_array_equal(back_b.data, b)

    def test_concat_then_slice_identity_rank1(self):
        a, b = T([1.0, 2.0]), T([3.0])
        joined = tt.concat(a, b)
        np.testing.assert_array_equal(tt.slice_range(joined, 0, 2).data, a.data)
        np.testing.assert_array_equal(tt.slice_range(joined, 2, 3).data, b.data)


def _uniform(rng, shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, shape)


def _away_from(rng, shape, gap=0.05, lo=0.05, hi=2.0):
    # Magnitudes bounded away from zero so kinked ops stay finite-difference safe.
    return rng.uniform(lo + gap, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _spread_columns(rng, shape):
    # Per-column top-2 gap above 1e-3 keeps column_max argmax stable under probing.
    while True:
        x = rng.uniform(-2, 2, shape)
        top2 = np.sort(x, axis=0)[-2:, :]
        if np.all(top2[1] - top2[0] > 1e-3):
            return x


def _nonzero_mask(rng, m):
    while True:
        mask = rng.integers(0, 2, m)
        if mask.sum() > 0:
            return mask


# One entry per differentiable op: input builders and the op under test.
OP_CASES = {
    "matmul": lambda rng: ((_uniform(rng, (3, 4)), _uniform(rng, (4, 2))), tt.matmul),
    "matvec": lambda rng: ((_uniform(rng, (3, 4)), _uniform(rng, 4)), tt.matvec),
    "transpose": lambda rng: ((_uniform(rng, (3, 4)),), tt.transpose),
    "softmax_rows": lambda rng: ((_uniform(rng, (3, 4)),), tt.softmax_rows),
    "add": lambda rng: ((_uniform(rng, (3, 4)), _uniform(rng, (3, 4))), tt.add),
    "add_rowvec": lambda rng: ((_uniform(rng, (3, 4)), _uniform(rng, 4)), tt.add),
    "sub": lambda rng: ((_uniform(rng, (3, 4)), _uniform(rng, (3, 4))), tt.sub),
    "mul": lambda rng: ((_uniform(rng, (3, 4)), _uniform(rng, (3, 4))), tt.mul),
    "div": lambda rng: ((_uniform(rng, (3, 4)), _away_from(rng, (3, 4), lo=0.5)), tt.div),
    "scale": lambda rng: ((_uniform(rng, (3, 4)),), lambda x: tt.scale(x, 1.3)),
    "tanh": lambda rng: ((_uniform(rng, (3, 4)),), tt.tanh),
    "sigmoid": lambda rng: ((_uniform(rng, (3, 4)),), tt.sigmoid),
    "relu": lambda rng: ((_away_from(rng, (3, 4)),), tt.relu),
    "sqrt": lambda rng: ((_uniform(rng, (3, 4), lo=0.1, hi=2.0),), tt.sqrt),
    "clip": lambda rng: ((_away_from(rng, (3, 4), lo=0.1, hi=0.7),), lambda x: tt.clip(x, -0.8, 0.8)),
    "sum": lambda rng: ((_uniform(rng, (3, 4)),), tt.sum),
    "mean": lambda rng: ((_uniform(rng, (3, 4)),), tt.mean),
    "mean_rows": lambda rng: ((_uniform(rng, (3, 4)),), tt.mean_rows),
    "masked_mean_rows": lambda rng: (
        (_uniform(rng, (4, 3)),),
        (lambda mask: lambda x: tt.masked_mean_rows(x, mask))(_nonzero_mask(rng, 4)),
    ),
    "column_max": lambda rng: ((_spread_columns(rng, (4, 3)),), tt.column_max),
    "concat_rows": lambda rng: ((_uniform(rng, (2, 3)), _uniform(rng, (3, 3))), lambda a, b: tt.concat(a, b, 0)),
    "concat_cols": lambda rng: ((_uniform(rng, (3, 2)), _uniform(rng, (3, 3))), lambda a, b: tt.concat(a, b, 1)),
    "slice_rows": lambda rng: ((_uniform(rng, (4, 3)),), lambda x: tt.slice_range(x, 1, 3, 0)),
    "slice_cols": lambda rng: ((_uniform(rng, (3, 4)),), lambda x: tt.slice_range(x, 1, 3, 1)),
    "take_rows": lambda rng: (
        (_uniform(rng, (5, 3)),),
        (lambda idx: lambda x: tt.take_rows(x, idx))(rng.integers(0, 5, 6)),
    ),
    "row": lambda rng: ((_uniform(rng, (4, 3)),), lambda x: tt.row(x, 2)),
    "layer_norm_rows": lambda rng: (
        (_uniform(rng, (3, 5)), _uniform(rng, 5, 0.5, 1.5), _uniform(rng, 5)),
        tt.layer_norm_rows,
    ),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradient_matches_finite_differences(name):
    # 100 random trials per op; analytic vs central differences at h=1e-5.
    rng = np.random.default_rng(abs(hash(name)) % (2**32))
    build = OP_CASES[name]
    worst = 0.0
    for _ in range(100):
        arrays, apply = build(rng)
        tensors = [T(a.copy(), grad=True) for a in arrays]
        probe = None  # fixed random weights turn the op output into a scalar

        def value():
            out = apply(*tensors)
            return float((out.data * probe).sum())

        with ComputationTape() as tape:
            out = apply(*tensors)
            probe = rng.uniform(-1, 1, out.shape)
            loss = tt.sum(tt.mul(out, Tensor(probe)))
        backward(loss, tape)
        for t in tensors:
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            numeric = numeric_gradient(value, t.data, h=1e-5)
            worst = max(worst, max_relative_error(analytic, numeric))
    assert worst < 1e-5, f"{name}: max relative error {worst}"


class TestTapeMechanics:
    def test_no_recording_outside_tape(self):
        x = T([1.0], grad=True)
        y = tt.scale(x, 2.0)
        assert not y.requires_grad

    def test_recording_only_for_grad_inputs(self):
        with ComputationTape() as tape:
            y = tt.scale(T([1.0]), 2.0)
        assert len(tape) == 0 and not y.requires_grad

    def test_take_rows_accumulates_repeated_indices(self):
        table = T(np.arange(6, dtype=np.float64).reshape(3, 2), grad=True)
        with ComputationTape() as tape:
            out = tt.take_rows(table, [1, 1, 2])
            loss = tt.sum(out)
        backward(loss, tape)
        np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [1, 1]])

    def test_nested_tapes_restore_active(self):
        x = T([1.0], grad=True)
        with ComputationTape() as outer:
            tt.scale(x, 2.0)
            with ComputationTape() as inner:
                tt.scale(x, 3.0)
            tt.scale(x, 4.0)
        assert len(inner) == 1 and len(outer) == 2
