"""Tensor-core op semantics, backward rules, and the tape contract."""

import numpy as np
import pytest

from mlva import tensor as T
from mlva.errors import (
    DataError,
    DegenerateInputError,
    DimensionError,
    GraphError,
    NumericalError,
)
from mlva.gradcheck import finite_diff_check
from mlva.tensor import Graph, Tensor, backward


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


class TestMatmul:
    def test_identity(self):
        x = Tensor([[2.0, -1.0], [0.5, 3.0]])
        out = T.matmul(Tensor(np.eye(2, dtype=np.float32)), x)
        np.testing.assert_array_equal(out.data, x.data)

    def test_hand_product(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_allclose(out.data, [[3.0], [7.0]])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        a = t64(rng.standard_normal((3, 4)), requires_grad=True)
        b = t64(rng.standard_normal((4, 2)), requires_grad=True)
        err = finite_diff_check(
            lambda ps: T.reduce_sum(T.tanh(T.matmul(ps[0], ps[1]))), [a, b])
        assert err < 1e-4

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError) as exc:
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        assert "(2, 3)" in str(exc.value)


class TestPointwise:
    def test_sigmoid_at_zero(self):
        assert T.sigmoid(Tensor(0.0)).item() == pytest.approx(0.5)

    def test_relu_negative_and_backward(self):
        x = t64([-3.0], requires_grad=True)
        with Graph():
            out = T.reduce_sum(T.relu(x))
        assert out.item() == 0.0
        backward(out)
        np.testing.assert_array_equal(x.grad, [0.0])

    def test_tanh_gradient(self):
        rng = np.random.default_rng(3)
        x = t64(rng.standard_normal(5), requires_grad=True)
        err = finite_diff_check(
            lambda ps: T.reduce_sum(T.mul(T.tanh(ps[0]), ps[0])), [x])
        assert err < 1e-4

    def test_scalar_broadcast_binary(self):
        x = Tensor(np.array([1.0, 2.0]))
        s = Tensor(np.asarray(3.0))
        np.testing.assert_allclose(T.add(x, s).data, [4.0, 5.0])
        np.testing.assert_allclose(T.mul(s, x).data, [3.0, 6.0])

    def test_incompatible_shapes_rejected(self):
        with pytest.raises(DimensionError):
            T.add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_nonfinite_output_detected(self):
        big = Tensor(np.array([1e38], dtype=np.float32))
        with np.errstate(over="ignore"), pytest.raises(NumericalError):
            T.mul(big, big)


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=1e-6)

    def test_extreme_values_stable(self):
        out = T.softmax(Tensor([1000.0, 0.0]))
        np.testing.assert_allclose(out.data, [1.0, 0.0])

    def test_sums_to_one_and_permutation_equivariant(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.standard_normal(6)
            perm = rng.permutation(6)
            y = T.softmax(t64(x)).data
            assert abs(y.sum() - 1.0) < 1e-6
            y_perm = T.softmax(t64(x[perm])).data
            np.testing.assert_allclose(y_perm, y[perm], rtol=1e-12)

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        x0 = rng.standard_normal(4)
        for i in range(4):
            x = t64(x0, requires_grad=True)
            err = finite_diff_check(
                lambda ps, i=i: T.reshape(T.take(T.softmax(ps[0]), [i]), ()), [x])
            assert err < 1e-4

    def test_empty_rejected(self):
        with pytest.raises(DimensionError):
            T.softmax(Tensor(np.zeros(0)))


class TestCosine:
    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = Tensor(rng.standard_normal(7))
            assert T.cosine_similarity(x, x).item() == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal(self):
        assert T.cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        u, v = rng.standard_normal(5), rng.standard_normal(5)
        base = T.cosine_similarity(t64(u), t64(v)).item()
        scaled = T.cosine_similarity(t64(2.0 * u), t64(3.0 * v)).item()
        assert scaled == pytest.approx(base, abs=1e-6)

    def test_both_degenerate_rejected(self):
        with pytest.raises(DegenerateInputError):
            T.cosine_similarity(Tensor(np.zeros(3)), Tensor(np.zeros(3)))

    def test_one_degenerate_side_uses_clamp(self):
        out = T.cosine_similarity(Tensor(np.zeros(3)), Tensor([1.0, 0.0, 0.0]))
        assert out.item() == 0.0

    def test_matrix_matches_scalar_bitwise(self):
        rng = np.random.default_rng(5)
        for dtype in (np.float32, np.float64):
            a = rng.standard_normal((4, 6)).astype(dtype)
            b = rng.standard_normal((3, 6)).astype(dtype)
            mat = T.cosine_matrix(Tensor(a), Tensor(b)).data
            for i in range(4):
                for j in range(3):
                    single = T.cosine_similarity(Tensor(a[i]), Tensor(b[j])).item()
                    assert float(mat[i, j]) == single


class TestHinge:
    def test_margin_satisfied(self):
        out = T.hinge_margin(Tensor(0.5), Tensor(0.9), alpha=0.2)
        assert out.item() == 0.0

    def test_direct_formula(self):
        out = T.hinge_margin(Tensor(0.5), Tensor(0.4), alpha=0.2)
        assert out.item() == pytest.approx(0.3, abs=1e-7)

    def test_kink_gradient_is_zero(self):
        s = t64(0.7, requires_grad=True)
        p = t64(0.7, requires_grad=True)
        with Graph():
            out = T.hinge_margin(s, p, alpha=0.0)
        assert out.item() == 0.0
        backward(out)
        assert s.grad == 0.0 and p.grad == 0.0

    def test_negative_alpha_rejected(self):
        from mlva.errors import ConfigError
        with pytest.raises(ConfigError):
            T.hinge_margin(Tensor(0.1), Tensor(0.2), alpha=-0.1)

    def test_monotonicity(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            sn, sp, alpha = rng.uniform(-1, 1, 3)
            alpha = abs(alpha)
            base = T.hinge_margin(Tensor(sn), Tensor(sp), alpha).item()
            up = T.hinge_margin(Tensor(sn + 0.1), Tensor(sp), alpha).item()
            down = T.hinge_margin(Tensor(sn), Tensor(sp + 0.1), alpha).item()
            assert up >= base
            assert down <= base


class TestBackward:
    def test_sum_gives_ones(self):
        x = t64([1.0, -2.0, 3.0], requires_grad=True)
        with Graph():
            loss = T.reduce_sum(x)
        backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones(3))

    def test_cosine_stationary_on_ray(self):
        rng = np.random.default_rng(9)
        u0 = rng.standard_normal(5)
        u = t64(u0, requires_grad=True)
        v = t64(u0.copy())
        with Graph():
            loss = T.cosine_similarity(u, v)
        backward(loss)
        # cos(u, v) is scale-invariant in u, so at u == v the gradient
        # vanishes; central differences agree in absolute terms (the
        # relative gap is meaningless at an exact zero)
        assert np.abs(u.grad).max() < 1e-8
        h = 1e-6
        for i in range(5):
            u.data[i] = u0[i] + h
            fp = T.cosine_similarity(u, v).item()
            u.data[i] = u0[i] - h
            fm = T.cosine_similarity(u, v).item()
            u.data[i] = u0[i]
            assert abs((fp - fm) / (2 * h)) < 1e-6

    def test_repeated_backward_accumulates(self):
        x = t64([1.0, 2.0], requires_grad=True)
        with Graph():
            loss = T.reduce_sum(x)
        backward(loss)
        backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_fanout_sums_both_paths(self):
        x = t64([1.5], requires_grad=True)
        with Graph():
            loss = T.reduce_sum(T.add(T.mul(x, x), T.scale(x, 3.0)))
        backward(loss)
        np.testing.assert_allclose(x.grad, [2 * 1.5 + 3.0])

    def test_non_scalar_loss_rejected(self):
        x = t64([1.0, 2.0], requires_grad=True)
        with Graph():
            y = T.mul(x, x)
        with pytest.raises(DimensionError):
            backward(y)

    def test_backward_without_graph_rejected(self):
        x = t64(1.0, requires_grad=True)
        y = T.mul(x, x)  # no active graph: nothing recorded
        with pytest.raises(GraphError):
            backward(y)


class TestGatherScatter:
    def test_take_duplicate_indices_accumulate(self):
        x = t64([1.0, 2.0, 3.0], requires_grad=True)
        with Graph():
            picked = T.take(x, [1, 1, 2])
            loss = T.reduce_sum(picked)
        backward(loss)
        np.testing.assert_array_equal(x.grad, [0.0, 2.0, 1.0])

    def test_take_out_of_range(self):
        with pytest.raises(DataError):
            T.take(Tensor(np.zeros(3)), [3])

    def test_embedding_repeated_ids(self):
        table = t64(np.arange(6.0).reshape(3, 2), requires_grad=True)
        with Graph():
            loss = T.reduce_sum(T.embedding_lookup(table, [[0, 0, 2]]))
        backward(loss)
        np.testing.assert_array_equal(table.grad, [[2, 2], [0, 0], [1, 1]])

    def test_embedding_oov(self):
        with pytest.raises(DataError):
            T.embedding_lookup(Tensor(np.zeros((3, 2))), [[5]])


class TestReduceMax:
    def test_tie_routes_to_first(self):
        x = t64([2.0, 5.0, 5.0], requires_grad=True)
        with Graph():
            loss = T.reduce_max(x)
        backward(loss)
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_axis_reduction(self):
        x = Tensor(np.array([[1.0, 7.0], [4.0, 2.0]]))
        np.testing.assert_array_equal(T.reduce_max(x, axis=0).data, [4.0, 7.0])
        np.testing.assert_array_equal(T.reduce_max(x, axis=1).data, [7.0, 4.0])


class TestFiniteDiffCheck:
    def test_quadratic_is_exact(self):
        x = t64(np.array([1.0, -2.0, 0.5]), requires_grad=True)
        err = finite_diff_check(
            lambda ps: T.scale(T.reduce_sum(T.mul(ps[0], ps[0])), 0.5), [x])
        assert err < 1e-8

    def test_constant_function(self):
        x = t64(np.array([1.0, 2.0]), requires_grad=True)
        err = finite_diff_check(lambda ps: Tensor(np.asarray(3.0)) if False else
                                T.scale(T.reduce_sum(ps[0]), 0.0), [x])
        assert err == 0.0


# every differentiable op, finite-differenced over many seeds
_OP_CASES = {
    "matmul": lambda r: (lambda ps: T.reduce_sum(T.sigmoid(T.matmul(ps[0], ps[1]))),
                         [r.standard_normal((2, 3)), r.standard_normal((3, 2))]),
    "add": lambda r: (lambda ps: T.reduce_sum(T.add(ps[0], ps[1])),
                      [r.standard_normal(4), r.standard_normal(4)]),
    "add_scalar": lambda r: (lambda ps: T.reduce_sum(T.add(ps[0], ps[1])),
                             [r.standard_normal(4), r.standard_normal(())]),
    "sub": lambda r: (lambda ps: T.reduce_sum(T.tanh(T.sub(ps[0], ps[1]))),
                      [r.standard_normal(4), r.standard_normal(4)]),
    "mul": lambda r: (lambda ps: T.reduce_sum(T.mul(ps[0], ps[1])),
                      [r.standard_normal(4), r.standard_normal(4)]),
    "scale": lambda r: (lambda ps: T.reduce_sum(T.scale(ps[0], 1.7)),
                        [r.standard_normal(4)]),
    "add_const": lambda r: (lambda ps: T.reduce_sum(T.tanh(T.add_const(ps[0], 0.3))),
                            [r.standard_normal(4)]),
    "add_rowvec": lambda r: (lambda ps: T.reduce_sum(T.tanh(T.add_rowvec(ps[0], ps[1]))),
                             [r.standard_normal((3, 2)), r.standard_normal(2)]),
    "sigmoid": lambda r: (lambda ps: T.reduce_sum(T.sigmoid(ps[0])),
                          [r.standard_normal(5)]),
    "tanh": lambda r: (lambda ps: T.reduce_sum(T.tanh(ps[0])),
                       [r.standard_normal(5)]),
    "relu": lambda r: (lambda ps: T.reduce_sum(T.relu(ps[0])),
                       [r.standard_normal(5) + np.sign(r.standard_normal(5)) * 0.01]),
    "concat": lambda r: (lambda ps: T.reduce_sum(T.tanh(T.concat([ps[0], ps[1]], axis=-1))),
                         [r.standard_normal((2, 2)), r.standard_normal((2, 3))]),
    "stack_rows": lambda r: (lambda ps: T.reduce_sum(T.tanh(T.stack_rows(list(ps)))),
                             [r.standard_normal(3), r.standard_normal(3)]),
    "reshape": lambda r: (lambda ps: T.reduce_sum(T.tanh(T.reshape(ps[0], (6,)))),
                          [r.standard_normal((2, 3))]),
    "mean_axis": lambda r: (lambda ps: T.reduce_sum(T.reduce_mean(T.tanh(ps[0]), axis=0)),
                            [r.standard_normal((3, 2))]),
    "sum_axis": lambda r: (lambda ps: T.reduce_sum(T.reduce_sum(T.tanh(ps[0]), axis=1)),
                           [r.standard_normal((3, 2))]),
    "reduce_max": lambda r: (lambda ps: T.reduce_max(ps[0]),
                             [r.standard_normal(6)]),
    "take": lambda r: (lambda ps: T.reduce_sum(T.take(ps[0], [0, 2, 2])),
                       [r.standard_normal(4)]),
    "gather_rows": lambda r: (lambda ps: T.reduce_sum(T.gather_rows(ps[0], [1, 1, 0])),
                              [r.standard_normal((3, 2))]),
    "embedding": lambda r: (lambda ps: T.reduce_sum(T.embedding_lookup(ps[0], [[0, 2, 0]])),
                            [r.standard_normal((3, 2))]),
    "softmax": lambda r: (lambda ps: T.reduce_sum(T.mul(T.softmax(ps[0]), ps[0])),
                          [r.standard_normal(5)]),
    "softmax_rows": lambda r: (
        lambda ps: T.reduce_sum(T.mul(T.softmax_rows(ps[0], [2, 3]), ps[0])),
        [r.standard_normal((2, 3))]),
    "matvec_lastdim": lambda r: (
        lambda ps: T.reduce_sum(T.tanh(T.matvec_lastdim(ps[0], ps[1]))),
        [r.standard_normal((2, 3, 4)), r.standard_normal(4)]),
    "weighted_rows_sum": lambda r: (
        lambda ps: T.reduce_sum(T.tanh(T.weighted_rows_sum(ps[0], ps[1]))),
        [r.standard_normal((2, 3, 2)), r.standard_normal((2, 3))]),
    "cosine_similarity": lambda r: (
        lambda ps: T.cosine_similarity(ps[0], ps[1]),
        [r.standard_normal(5), r.standard_normal(5)]),
    "cosine_matrix": lambda r: (
        lambda ps: T.reduce_mean(T.cosine_matrix(ps[0], ps[1])),
        [r.standard_normal((3, 4)), r.standard_normal((2, 4))]),
    "hinge_margin": lambda r: (
        lambda ps: T.reduce_sum(T.hinge_margin(ps[0], ps[1], 0.2)),
        [r.standard_normal(3), r.standard_normal(3) + 0.5]),
    "cross_entropy_rows": lambda r: (
        lambda ps: T.reduce_mean(T.cross_entropy_rows(ps[0], [1, 0])),
        [r.standard_normal((2, 3))]),
    "lstm_sequence": lambda r: (
        lambda ps: T.reduce_mean(T.lstm_sequence(ps[0], ps[1], ps[2], ps[3])),
        [r.standard_normal((2, 3, 2)), 0.5 * r.standard_normal((2, 8)),
         0.5 * r.standard_normal((2, 8)), 0.1 * r.standard_normal(8)]),
}


@pytest.mark.parametrize("seed", range(100))
def test_all_ops_gradcheck_over_seeds(seed):
    rng = np.random.default_rng(seed)
    name = list(_OP_CASES)[seed % len(_OP_CASES)]
    fn, arrays = _OP_CASES[name](rng)
    params = [t64(a, requires_grad=True) for a in arrays]
    assert finite_diff_check(fn, params, h=1e-6) < 1e-4, name


@pytest.mark.parametrize("name", sorted(_OP_CASES))
def test_each_op_gradcheck(name):
    rng = np.random.default_rng(hash(name) % (2**31))
    fn, arrays = _OP_CASES[name](rng)
    params = [t64(a, requires_grad=True) for a in arrays]
    assert finite_diff_check(fn, params, h=1e-6) < 1e-4
