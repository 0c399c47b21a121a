import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rescap import tensor as T
from rescap.rng import normal_array
from rescap.tensor import NumericalError, ShapeError, Tensor


def rand(seed, *shape):
    n = int(np.prod(shape)) if shape else 1
    return normal_array(seed, n).reshape(shape)


class TestMatmul:
    def test_identity(self):
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(Tensor(np.eye(2)), m)
        np.testing.assert_array_equal(out.data, m.data)

    def test_hand_product(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        np.testing.assert_allclose(out.data, [[17.0], [39.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_backward_rule(self):
        a = Tensor(rand(1, 3, 4), requires_grad=True)
        b = Tensor(rand(2, 4, 2), requires_grad=True)
        T.sum_all(T.matmul(a, b)).backward()
        g = np.ones((3, 2))
        np.testing.assert_allclose(a.grad, g @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ g)


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.25] * 4)

    def test_hand_case(self):
        out = T.softmax(Tensor([0.0, np.log(3.0)]))
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_shift_invariance_no_overflow(self):
        out = T.softmax(Tensor([1000.0, 1000.0]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_empty_axis_rejected(self):
        with pytest.raises(ShapeError):
            T.softmax(Tensor(np.zeros((3, 0))), axis=1)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=50))
    @settings(max_examples=60, deadline=None)
    def test_sums_to_one_and_nonnegative(self, vals):
        out = T.softmax(Tensor(vals)).data
        assert abs(out.sum() - 1.0) <= 1e-9
        assert np.all(out >= 0.0)

    def test_long_input(self):
        out = T.softmax(Tensor(rand(3, 10_000) * 10)).data
        assert abs(out.sum() - 1.0) <= 1e-9
        assert np.all(out >= 0.0)


class TestElementwise:
    def test_mul_annihilator(self):
        out = T.mul(Tensor([1.0, 2.0, 3.0]), Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 0.0])

    def test_sigmoid_symmetry_point(self):
        np.testing.assert_allclose(T.sigmoid(Tensor([0.0])).data, [0.5])

    def test_tanh_derivative_at_zero_via_backward(self):
        x = Tensor([0.0], requires_grad=True)
        T.sum_all(T.tanh(x)).backward()
        np.testing.assert_allclose(x.grad, [1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_scalar_broadcast_allowed(self):
        out = T.mul(Tensor([1.0, 2.0]), 3.0)
        np.testing.assert_array_equal(out.data, [3.0, 6.0])
        x = Tensor([1.0, 2.0], requires_grad=True)
        T.sum_all(T.add(x, 5.0)).backward()
        np.testing.assert_array_equal(x.grad, [1.0, 1.0])

    def test_sigmoid_extreme_inputs_stay_finite(self):
        out = T.sigmoid(Tensor([-1e4, 1e4])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-12)


class TestMeanAlong:
    def test_mean_rows(self):
        out = T.mean_along(Tensor([[1.0, 3.0], [5.0, 7.0]]), axis=1)
        np.testing.assert_allclose(out.data, [2.0, 6.0])
        out = T.mean_along(Tensor([[1.0, 3.0], [5.0, 7.0]]), axis=0)
        np.testing.assert_allclose(out.data, [3.0, 5.0])

    def test_single_row_identity(self):
        out = T.mean_along(Tensor([[4.0, 9.0]]), axis=0)
        np.testing.assert_allclose(out.data, [4.0, 9.0])

    def test_constant_idempotent(self):
        out = T.mean_along(Tensor(np.full((5, 3), 2.5)), axis=0)
        np.testing.assert_allclose(out.data, [2.5, 2.5, 2.5])

    def test_zero_length_axis(self):
        with pytest.raises(ShapeError):
            T.mean_along(Tensor(np.zeros((0, 3))), axis=0)

    def test_backward_distributes(self):
        x = Tensor(rand(4, 6), requires_grad=True)
        T.sum_all(T.mean_along(x, axis=0)).backward()
        np.testing.assert_allclose(x.grad, np.full((6,), 1.0 / 6))


class TestConcat:
    def test_basic(self):
        out = T.concat([Tensor([1.0, 2.0]), Tensor([3.0])])
        np.testing.assert_array_equal(out.data, [1.0, 2.0, 3.0])

    def test_empty_part_is_neutral(self):
        out = T.concat([Tensor([1.0, 2.0]), Tensor(np.zeros((0,)))])
        np.testing.assert_array_equal(out.data, [1.0, 2.0])

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4)))], axis=0)

    def test_backward_slices_gradient(self):
        a = Tensor(rand(5, 2, 3), requires_grad=True)
        b = Tensor(rand(6, 2, 2), requires_grad=True)
        T.sum_all(T.concat([a, b], axis=1)).backward()
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
        np.testing.assert_array_equal(b.grad, np.ones((2, 2)))


class TestBackward:
    def test_quadratic_hand_grad(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        T.sum_all(T.mul(w, w)).backward()
        np.testing.assert_allclose(w.grad, [2.0, 4.0])

    def test_untouched_tensor_has_zero_grad(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        v = Tensor([3.0], requires_grad=True)
        T.sum_all(T.mul(v, v)).backward()
        assert w.grad is None  # read as zero

    def test_tanh_chain_at_zero(self):
        x = Tensor(np.zeros(4), requires_grad=True)
        T.sum_all(T.tanh(x)).backward()
        np.testing.assert_allclose(x.grad, np.ones(4))

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            T.mul(x, x).backward()

    def test_repeated_backward_accumulates(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        loss = T.sum_all(T.mul(w, w))
        loss.backward()
        loss.backward()
        np.testing.assert_allclose(w.grad, [4.0, 8.0])

    def test_shared_subexpression_equals_expansion(self):
        x = Tensor(rand(7, 5), requires_grad=True)
        y = T.tanh(x)
        T.sum_all(T.add(T.mul(y, y), y)).backward()
        shared = x.grad.copy()

        x2 = Tensor(x.data.copy(), requires_grad=True)
        T.sum_all(T.add(T.mul(T.tanh(x2), T.tanh(x2)), T.tanh(x2))).backward()
        np.testing.assert_allclose(shared, x2.grad, rtol=1e-12)

    def test_finite_outputs_on_finite_inputs(self):
        x = Tensor(rand(8, 64) * 50)
        for out in (T.tanh(x), T.sigmoid(x), T.relu(x), T.softmax(x)):
            assert np.all(np.isfinite(out.data))


class TestStructuralOps:
    def test_slice_cols_roundtrip(self):
        x = Tensor(rand(9, 3, 8), requires_grad=True)
        T.sum_all(T.slice_cols(x, 2, 5)).backward()
        expect = np.zeros((3, 8))
        expect[:, 2:5] = 1.0
        np.testing.assert_array_equal(x.grad, expect)

    def test_take_rows_scatter(self):
        m = Tensor(rand(10, 4, 3), requires_grad=True)
        T.sum_all(T.take_rows(m, [1, 1, 3])).backward()
        expect = np.zeros((4, 3))
        expect[1] = 2.0
        expect[3] = 1.0
        np.testing.assert_array_equal(m.grad, expect)

    def test_take_rows_bounds(self):
        with pytest.raises(ShapeError):
            T.take_rows(Tensor(np.zeros((4, 3))), [4])

    def test_repeat_rows(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
        out = T.repeat_rows(x, 3)
        assert out.shape == (6, 2)
        np.testing.assert_array_equal(out.data[0], out.data[2])
        T.sum_all(out).backward()
        np.testing.assert_array_equal(x.grad, np.full((2, 2), 3.0))

    def test_weighted_sum_rows_hand(self):
        w = Tensor([[0.25, 0.75]])
        x = Tensor(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
        out = T.weighted_sum_rows(w, x)
        np.testing.assert_allclose(out.data, [[0.25, 0.75]])

    def test_add_bias(self):
        x = Tensor(rand(11, 5, 3), requires_grad=True)
        b = Tensor(rand(12, 3), requires_grad=True)
        T.sum_all(T.add_bias(x, b)).backward()
        np.testing.assert_array_equal(b.grad, np.full(3, 5.0))
        np.testing.assert_array_equal(x.grad, np.ones((5, 3)))

    def test_cross_entropy_uniform(self):
        logits = Tensor(np.zeros((2, 7)))
        out = T.cross_entropy_rows(logits, [3, 5], [0.5, 0.5])
        assert out.item() == pytest.approx(np.log(7.0))


class TestNoGrad:
    def test_no_graph_recorded(self):
        x = Tensor(rand(13, 4), requires_grad=True)
        with T.no_grad():
            y = T.tanh(x)
        assert y._bw is None and not y.requires_grad


def _gradcheck_case(build, seeds=range(5), tol=1e-4):
    worst = 0.0
    for seed in seeds:
        params, f = build(seed)
        err = T.grad_check(f, params, step=1e-5)
        worst = max(worst, err)
    assert worst < tol, f"max relative error {worst}"


class TestGradCheck:
    def test_quadratic_is_tight(self):
        w = Tensor(rand(20, 6), requires_grad=True)

        def f(params):
            return T.sum_all(T.mul(params[0], params[0]))

        assert T.grad_check(f, [w], step=1e-5) < 1e-9

    def test_matmul(self):
        def build(seed):
            a = Tensor(rand(100 + seed, 3, 4), requires_grad=True)
            b = Tensor(rand(200 + seed, 4, 2), requires_grad=True)

            def f(params):
                return T.sum_all(T.tanh(T.matmul(params[0], params[1])))

            return [a, b], f

        _gradcheck_case(build)

    def test_softmax(self):
        def build(seed):
            x = Tensor(rand(300 + seed, 4, 5), requires_grad=True)
            probe = rand(301 + seed, 4, 5)

            def f(params):
                return T.sum_all(T.mul(T.softmax(params[0], axis=1), Tensor(probe)))

            return [x], f

        _gradcheck_case(build)

    def test_unary_chain(self):
        def build(seed):
            x = Tensor(rand(400 + seed, 6) + 0.3, requires_grad=True)  # keep clear of relu kink

            def f(params):
                return T.sum_all(T.relu(T.sigmoid(T.tanh(params[0]))))

            return [x], f

        _gradcheck_case(build)

    def test_mean_concat_reshape(self):
        def build(seed):
            a = Tensor(rand(500 + seed, 2, 6), requires_grad=True)
            b = Tensor(rand(600 + seed, 3, 6), requires_grad=True)

            def f(params):
                joined = T.concat([params[0], params[1]], axis=0)
                return T.sum_all(T.tanh(T.mean_along(T.reshape(joined, (5, 2, 3)), axis=1)))

            return [a, b], f

        _gradcheck_case(build)

    def test_structural_ops(self):
        def build(seed):
            m = Tensor(rand(700 + seed, 5, 3), requires_grad=True)
            w = Tensor(rand(800 + seed, 2, 4), requires_grad=True)
            x3 = Tensor(rand(900 + seed, 2, 4, 3), requires_grad=True)
            b = Tensor(rand(950 + seed, 3), requires_grad=True)

            def f(params):
                m_, w_, x3_, b_ = params
                rows = T.take_rows(m_, [0, 2])
                combo = T.weighted_sum_rows(T.softmax(w_, axis=1), x3_)
                return T.sum_all(T.tanh(T.add_bias(T.add(rows, combo), b_)))

            return [m, w, x3, b], f

        _gradcheck_case(build)

    def test_cross_entropy(self):
        def build(seed):
            logits = Tensor(rand(1000 + seed, 4, 6), requires_grad=True)

            def f(params):
                return T.cross_entropy_rows(params[0], [1, 0, 5, 3], [0.4, 0.2, 0.1, 0.3])

            return [logits], f

        _gradcheck_case(build)

    def test_max_coords_subsample(self):
        w = Tensor(rand(1100, 30, 10), requires_grad=True)

        def f(params):
            return T.sum_all(T.tanh(params[0]))

        assert T.grad_check(f, [w], step=1e-5, seed=3, max_coords=25) < 1e-4

    def test_nonfinite_f_rejected(self):
        x = Tensor([1.0], requires_grad=True)

        def f(params):
            return T.sum_all(T.mul(params[0], float("nan")))

        with pytest.raises(NumericalError):
            T.grad_check(f, [x])
