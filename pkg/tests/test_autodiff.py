import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from megcn.autodiff import (
    Param,
    ShapeError,
    Tensor,
    backward,
    channel_broadcast_add,
    concat,
    contract_graph,
    dropout,
    finite_diff_grad,
    global_mean,
    linear,
    mean_over_time,
    pairwise_tanh,
    pointwise_conv,
    relu,
    softmax_cross_entropy,
    tanh_map,
    temporal_conv,
    tsum,
)

from conftest import check_grads, make_param


def loop_contract(F, A):
    out = np.zeros_like(F)
    for a in range(F.shape[0]):
        for b in range(F.shape[1]):
            for c in range(F.shape[2]):
                for e in range(F.shape[3]):
                    out[a, b, c, e] = sum(F[a, b, c, d] * A[a, b, d, e] for d in range(F.shape[3]))
    return out


def sliding_window_conv(x, w, dilation, stride):
    c_out, c_in, k = w.shape
    _, T, N = x.shape
    pad = dilation * (k - 1) // 2
    t_out = (T + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((c_out, t_out, N))
    for o in range(c_out):
        for t in range(t_out):
            for n in range(N):
                acc = 0.0
                for i in range(c_in):
                    for j in range(k):
                        src = t * stride + j * dilation - pad
                        if 0 <= src < T:
                            acc += w[o, i, j] * x[i, src, n]
                out[o, t, n] = acc
    return out


class TestContractGraph:
    def test_identity_adjacency(self, rng):
        F = rng.normal(size=(2, 3, 4, 5))
        A = np.broadcast_to(np.eye(5), (2, 3, 5, 5))
        np.testing.assert_array_equal(contract_graph(Tensor(F), Tensor(A)).data, F)

    def test_zero_adjacency(self, rng):
        F = rng.normal(size=(2, 3, 4, 5))
        out = contract_graph(Tensor(F), Tensor(np.zeros((2, 3, 5, 5))))
        assert not out.data.any()

    def test_loop_oracle(self, rng):
        F, A = rng.normal(size=(2, 2, 3, 4)), rng.normal(size=(2, 2, 4, 4))
        out = contract_graph(Tensor(F), Tensor(A)).data
        assert np.abs(out - loop_contract(F, A)).max() <= 1e-12

    @pytest.mark.parametrize("bad, axis", [((3, 2, 4, 4), "axis 0"), ((2, 3, 4, 4), "axis 1"), ((2, 2, 3, 3), "joint")])
    def test_mismatch_names_axis(self, rng, bad, axis):
        with pytest.raises(ShapeError, match=axis):
            contract_graph(Tensor(rng.normal(size=(2, 2, 3, 4))), Tensor(rng.normal(size=bad)))

    def test_gradients(self, rng):
        F, A = make_param(rng, 2, 2, 3, 4), make_param(rng, 2, 2, 4, 4)
        check_grads(lambda: tanh_map(contract_graph(F, A)).sum(), [F, A])

    def test_channel_decoupling(self, rng):
        F, A = rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(2, 3, 5, 5))
        base = contract_graph(Tensor(F), Tensor(A)).data
        A2 = A.copy()
        A2[1, 2] += rng.normal(size=(5, 5))
        diff = np.abs(contract_graph(Tensor(F), Tensor(A2)).data - base) > 0
        assert diff[1, 2].any()
        diff[1, 2] = False
        assert not diff.any()


class TestPointwiseConv:
    def test_identity(self, rng):
        X = rng.normal(size=(3, 2, 4))
        out = pointwise_conv(Tensor(X), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, X)

    def test_zero_input_gives_bias(self):
        b = np.array([0.5, -1.0])
        out = pointwise_conv(Tensor(np.zeros((3, 2, 2))), Tensor(np.ones((2, 3))), Tensor(b))
        np.testing.assert_array_equal(out.data, np.broadcast_to(b[:, None, None], (2, 2, 2)))

    def test_matvec_oracle(self, rng):
        X, W, b = rng.normal(size=(3, 2, 2)), rng.normal(size=(2, 3)), rng.normal(size=2)
        out = pointwise_conv(Tensor(X), Tensor(W), Tensor(b)).data
        for t in range(2):
            for n in range(2):
                assert np.abs(out[:, t, n] - (W @ X[:, t, n] + b)).max() <= 1e-12

    def test_mismatch(self, rng):
        with pytest.raises(ShapeError):
            pointwise_conv(Tensor(rng.normal(size=(3, 2, 2))), Tensor(np.ones((2, 4))))

    def test_gradients_batched(self, rng):
        X, W, b = make_param(rng, 2, 3, 2, 2), make_param(rng, 2, 3), make_param(rng, 2)
        check_grads(lambda: tanh_map(pointwise_conv(X, W, b)).sum(), [X, W, b])


class TestTemporalConv:
    def test_identity_kernel(self, rng):
        X = rng.normal(size=(2, 6, 3))
        W = np.eye(2)[:, :, None]
        np.testing.assert_array_equal(temporal_conv(Tensor(X), [(Tensor(W), 1, 1)]).data, X)

    def test_zero_input(self, rng):
        out = temporal_conv(Tensor(np.zeros((2, 8, 3))), [(Tensor(rng.normal(size=(2, 2, 5))), 1, 1)])
        assert not out.data.any()

    def test_two_dilated_branches_match_sliding_window(self, rng):
        X = rng.normal(size=(2, 8, 3))
        ws = [rng.normal(size=(2, 2, 5)) for _ in range(2)]
        out = temporal_conv(Tensor(X), [(Tensor(ws[0]), 1, 1), (Tensor(ws[1]), 2, 1)]).data
        expected = sliding_window_conv(X, ws[0], 1, 1) + sliding_window_conv(X, ws[1], 2, 1)
        assert np.abs(out - expected).max() <= 1e-12

    def test_strided_matches_sliding_window(self, rng):
        X = rng.normal(size=(3, 9, 2))
        w = rng.normal(size=(2, 3, 5))
        out = temporal_conv(Tensor(X), [(Tensor(w), 2, 2)]).data
        assert out.shape == (2, 5, 2)
        assert np.abs(out - sliding_window_conv(X, w, 2, 2)).max() <= 1e-12

    def test_branch_extents_disagree(self, rng):
        X = Tensor(rng.normal(size=(2, 8, 3)))
        with pytest.raises(ShapeError, match="disagree"):
            temporal_conv(X, [(Tensor(np.ones((2, 2, 3))), 1, 1), (Tensor(np.ones((2, 2, 3))), 1, 2)])

    def test_kernel_too_large(self, rng):
        with pytest.raises(ShapeError, match="exceeds"):
            temporal_conv(Tensor(rng.normal(size=(2, 1, 3))), [(Tensor(np.ones((2, 2, 4))), 1, 1)])

    def test_gradients(self, rng):
        X = make_param(rng, 2, 2, 7, 3)
        w1, w2 = make_param(rng, 2, 2, 5), make_param(rng, 2, 2, 5)
        check_grads(lambda: tanh_map(temporal_conv(X, [(w1, 1, 2), (w2, 2, 2)])).sum(), [X, w1, w2])


class TestTanh:
    def test_values(self):
        assert tanh_map(Tensor(0.0)).data == 0.0
        assert tanh_map(Tensor(0.5)).data == pytest.approx(0.46211715726000974, abs=1e-15)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
    def test_odd_bounded_monotone(self, xs):
        x = np.sort(np.array(xs))
        y = tanh_map(Tensor(x)).data
        assert np.all(np.abs(y) <= 1.0)
        assert np.all(np.diff(y) >= 0)
        np.testing.assert_array_equal(tanh_map(Tensor(-x)).data, -y)


class TestMeanOverTime:
    def test_single_frame(self, rng):
        X = rng.normal(size=(2, 1, 3))
        np.testing.assert_array_equal(mean_over_time(Tensor(X)).data, X[:, 0])

    def test_constant(self):
        assert np.all(mean_over_time(Tensor(np.full((2, 4, 3), 2.5))).data == 2.5)

    def test_arithmetic(self):
        X = np.zeros((1, 3, 1))
        X[0, :, 0] = [1, 2, 3]
        assert mean_over_time(Tensor(X)).data[0, 0] == 2.0


class TestBackward:
    def test_linear_form(self, rng):
        x = rng.normal(size=5)
        w = Param(rng.normal(size=5))
        backward(tsum(w * Tensor(x)))
        np.testing.assert_allclose(w.grad, x)

    def test_unused_param_keeps_zero_grad(self, rng):
        w, unused = Param(rng.normal(size=3)), Param(rng.normal(size=3))
        backward(tsum(w * w))
        assert not unused.grad.any()

    def test_accumulates_across_calls(self, rng):
        w = Param(rng.normal(size=3))
        loss = tsum(w * w)
        backward(loss)
        backward(loss)
        np.testing.assert_allclose(w.grad, 4 * w.data)

    def test_shared_subexpression_doubles(self, rng):
        w = Param(rng.normal(size=3))
        shared = tanh_map(w)
        backward(tsum(shared + shared))
        once = Param(w.data)
        backward(tsum(tanh_map(once)))
        np.testing.assert_allclose(w.grad, 2 * once.grad, rtol=1e-15)

    def test_zero_grad(self, rng):
        w = Param(rng.normal(size=3))
        backward(tsum(w))
        w.zero_grad()
        assert w.grad.shape == w.shape and not w.grad.any()

    def test_non_scalar_loss(self, rng):
        with pytest.raises(ShapeError, match="scalar"):
            backward(Param(rng.normal(size=3)) * 2.0)


class TestFiniteDiff:
    def test_square(self):
        g = finite_diff_grad(lambda v: float(v[0] ** 2), np.array([3.0]), 1e-5)
        assert abs(g[0] - 6.0) <= 1e-8

    def test_constant(self):
        assert not finite_diff_grad(lambda v: 7.0, np.ones(4)).any()

    def test_tanh_derivative(self):
        g = finite_diff_grad(lambda v: math.tanh(v[0]), np.array([0.5]), 1e-5)
        assert abs(g[0] - (1 - math.tanh(0.5) ** 2)) <= 1e-8
        assert g[0] == pytest.approx(0.78645, abs=1e-5)

    def test_rejects_nonpositive_step(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda v: 0.0, np.ones(1), 0.0)


class TestPlumbing:
    def test_concat_and_grad(self, rng):
        a, b = make_param(rng, 1, 3, 2), make_param(rng, 2, 3, 2)
        out = concat([a, b], axis=0)
        np.testing.assert_array_equal(out.data, np.concatenate([a.data, b.data]))
        check_grads(lambda: tanh_map(concat([a, b], axis=0)).sum(), [a, b])

    def test_concat_mismatch(self, rng):
        with pytest.raises(ShapeError):
            concat([Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3)))], axis=0)

    def test_channel_broadcast_add(self, rng):
        V, A = make_param(rng, 2, 3, 4, 4), make_param(rng, 1, 4, 4)
        out = channel_broadcast_add(V, A)
        for c in range(3):
            np.testing.assert_array_equal(out.data[:, c], V.data[:, c] + A.data[0])
        check_grads(lambda: tanh_map(channel_broadcast_add(V, A)).sum(), [V, A])
        with pytest.raises(ShapeError):
            channel_broadcast_add(V, Tensor(np.zeros((2, 4, 4))))

    def test_pairwise_tanh(self, rng):
        P, Q = make_param(rng, 2, 3), make_param(rng, 2, 3)
        out = pairwise_tanh(P, Q).data
        assert out.shape == (2, 3, 3)
        assert out[1, 0, 2] == pytest.approx(np.tanh(P.data[1, 0] - Q.data[1, 2]), abs=1e-15)
        check_grads(lambda: pairwise_tanh(P, Q).sum(), [P, Q])

    def test_global_mean(self, rng):
        X = make_param(rng, 2, 3, 4, 5)
        np.testing.assert_allclose(global_mean(X).data, X.data.mean(axis=(-2, -1)), rtol=1e-14)
        check_grads(lambda: tanh_map(global_mean(X)).sum(), [X])

    def test_dropout_eval_identity_and_mask(self, rng):
        x = Param(rng.normal(size=(4, 6)))
        assert dropout(x, 0.5, rng, training=False) is x
        out = dropout(x, 0.5, np.random.default_rng(0), training=True)
        kept = out.data != 0
        np.testing.assert_allclose(out.data[kept], 2 * x.data[kept])
        backward(tsum(out))
        np.testing.assert_allclose(x.grad, 2.0 * kept)

    def test_softmax_cross_entropy(self, rng):
        loss = softmax_cross_entropy(Tensor(np.zeros((3, 5))), [0, 1, 4])
        assert abs(float(loss.data) - math.log(5)) <= 1e-12
        z = make_param(rng, 3, 4)
        check_grads(lambda: softmax_cross_entropy(z, [0, 3, 1]), [z])

    def test_linear(self, rng):
        x, W, b = make_param(rng, 2, 3), make_param(rng, 4, 3), make_param(rng, 4)
        np.testing.assert_allclose(linear(x, W, b).data, x.data @ W.data.T + b.data, rtol=1e-14)
        check_grads(lambda: tanh_map(linear(x, W, b)).sum(), [x, W, b])

    def test_relu_grad(self, rng):
        x = Param(rng.normal(size=10) + 0.05 * np.sign(rng.normal(size=10)))
        check_grads(lambda: tsum(relu(x) * relu(x)), [x])

    def test_getitem_grad(self, rng):
        x = make_param(rng, 2, 3, 4)
        check_grads(lambda: tanh_map(x[..., 1, :, :]).sum() + tanh_map(x[:, ::2, 1:]).sum(), [x])


small_shape = st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))


@settings(max_examples=100, deadline=None)
@given(shape=st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
       seed=st.integers(0, 2**32 - 1))
def test_contract_graph_matches_loop_oracle(shape, seed):
    a, b, c, n = shape
    r = np.random.default_rng(seed)
    F, A = r.normal(size=(a, b, c, n)), r.normal(size=(a, b, n, n))
    assert np.abs(contract_graph(Tensor(F), Tensor(A)).data - loop_contract(F, A)).max() <= 1e-12


@settings(max_examples=25, deadline=None)
@given(shape=small_shape, seed=st.integers(0, 2**32 - 1))
def test_graph_op_gradients_random_shapes(shape, seed):
    a, c, t, n = shape
    r = np.random.default_rng(seed)
    F, A = make_param(r, a, c, t, n), make_param(r, a, c, n, n)
    W, b = make_param(r, 2, c), make_param(r, 2)
    check_grads(lambda: tanh_map(pointwise_conv(contract_graph(F, A), W, b)).sum(), [F, A, W, b])
