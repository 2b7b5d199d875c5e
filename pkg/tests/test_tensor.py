import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dtrans import tensor as T
from dtrans.tensor import ShapeError, Tensor, check_gradients


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar f() w.r.t. every entry of x.data."""
    g = np.zeros_like(x.data)
    flat, gflat = x.data.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f().item()
        flat[i] = old - h
        fm = f().item()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else np.linalg.norm(a - b) / denom


def param(rng, *shape):
    return T.parameter(rng.uniform(-2, 2, shape))


def assert_fd(f, params, tol=1e-6):
    for p in params:
        p.zero_grad()
    f().backward()
    analytic = [p.grad.copy() for p in params]
    with T.no_grad():
        for p, a in zip(params, analytic):
            assert rel_err(a, numeric_grad(f, p)) < tol


class TestMatmul:
    def test_identity(self, rng):
        m = rng.normal(size=(2, 2))
        out = T.matmul(T.constant(np.eye(2)), T.constant(m))
        np.testing.assert_array_equal(out.data, m)

    def test_hand_product(self):
        out = T.matmul(T.constant([[1, 2], [3, 4]]), T.constant([[5], [6]]))
        np.testing.assert_array_equal(out.data, [[17], [39]])

    def test_gradient(self, rng):
        a, b = param(rng, 3, 4), param(rng, 4, 2)
        w = rng.normal(size=(3, 2))
        assert_fd(lambda: T.sum_(T.mul(T.matmul(a, b), T.constant(w))), [a, b])

    def test_batched_with_shared_weight(self, rng):
        a, b = param(rng, 2, 3, 4), param(rng, 4, 2)
        w = rng.normal(size=(2, 3, 2))
        assert_fd(lambda: T.sum_(T.mul(T.matmul(a, b), T.constant(w))), [a, b])

    def test_shape_error_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(T.constant(np.ones((2, 3))), T.constant(np.ones((2, 3))))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(T.constant([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)

    def test_no_overflow(self):
        y = T.softmax(T.constant([1000.0, 0.0])).data
        assert abs(y[0] - 1) < 1e-12 and abs(y[1]) < 1e-12

    def test_gradient(self, rng):
        x = param(rng, 8)
        w = rng.normal(size=8)
        assert_fd(lambda: T.sum_(T.mul(T.softmax(x), T.constant(w))), [x])

    def test_nan_propagates(self):
        assert np.isnan(T.softmax(T.constant([np.nan, 1.0])).data).all()

    def test_fully_masked_row_is_zero(self):
        y = T.softmax(T.constant([[-np.inf, -np.inf], [0.0, -np.inf]])).data
        np.testing.assert_array_equal(y, [[0, 0], [1, 0]])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 9)),
                  elements=st.floats(-50, 50)))
    def test_rows_sum_to_one(self, x):
        y = T.softmax(T.constant(x), axis=-1).data
        assert np.all(y >= 0) and np.all(y <= 1)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


class TestLayerNorm:
    def test_constant_vector(self):
        d = 5
        y = T.layer_norm(T.constant(np.full(d, 3.0)), T.constant(np.ones(d)), T.constant(np.zeros(d)))
        np.testing.assert_array_equal(y.data, np.zeros(d))

    def test_statistics(self, rng):
        x = rng.uniform(-2, 2, (4, 16))
        y = T.layer_norm(T.constant(x), T.constant(np.ones(16)), T.constant(np.zeros(16)), eps=1e-12).data
        np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-9)
        np.testing.assert_allclose(y.var(axis=-1), 1, atol=1e-9)

    def test_gradient(self, rng):
        x, g, b = param(rng, 3, 6), param(rng, 6), param(rng, 6)
        w = rng.normal(size=(3, 6))
        assert_fd(lambda: T.sum_(T.mul(T.layer_norm(x, g, b), T.constant(w))), [x, g, b])


class TestSmallOps:
    def test_relu(self):
        np.testing.assert_array_equal(T.relu(T.constant([-3.0, 2.0])).data, [0.0, 2.0])

    def test_embed_lookup_counts(self):
        table = T.parameter(np.zeros((5, 3)))
        T.sum_(T.embed_lookup(table, [[1, 3, 1], [1, 0, 4]])).backward()
        np.testing.assert_array_equal(table.grad[:, 0], [1, 3, 0, 1, 1])

    def test_embed_lookup_out_of_range(self):
        with pytest.raises(IndexError, match="7"):
            T.embed_lookup(T.parameter(np.zeros((5, 3))), [1, 7])

    def test_concat_shape_and_gradient(self, rng):
        a, b = param(rng, 2, 3), param(rng, 2, 5)
        assert T.concat([a, b], axis=-1).shape == (2, 8)
        w = rng.normal(size=(2, 8))
        assert_fd(lambda: T.sum_(T.mul(T.concat([a, b], axis=1), T.constant(w))), [a, b])

    def test_bias_add_gradient(self, rng):
        x, b = param(rng, 2, 3, 4), param(rng, 4)
        w = rng.normal(size=(2, 3, 4))
        assert_fd(lambda: T.sum_(T.mul(T.add(x, b), T.constant(w))), [x, b])

    def test_add_rejects_general_broadcast(self):
        with pytest.raises(ShapeError):
            T.add(T.constant(np.ones((2, 3))), T.constant(np.ones((2, 1))))

    def test_transpose_reshape_broadcast_gradients(self, rng):
        x = param(rng, 2, 3, 1)
        w = rng.normal(size=(3, 4, 2))
        f = lambda: T.sum_(T.mul(T.transpose(T.broadcast_to(x, (2, 3, 4)), (1, 2, 0)), T.constant(w)))
        assert_fd(f, [x])
        y = param(rng, 2, 6)
        w2 = rng.normal(size=(3, 4))
        assert_fd(lambda: T.sum_(T.mul(T.reshape(y, (3, 4)), T.constant(w2))), [y])

    def test_gather_scatter_are_adjoint(self, rng):
        idx = rng.integers(0, 5, size=(4, 6))
        x = param(rng, 2, 4, 5)
        w = rng.normal(size=(2, 4, 6))
        assert_fd(lambda: T.sum_(T.mul(T.gather_last(x, idx), T.constant(w))), [x])
        y = param(rng, 2, 4, 6)
        w2 = rng.normal(size=(2, 4, 5))
        assert_fd(lambda: T.sum_(T.mul(T.scatter_last(y, idx, 5), T.constant(w2))), [y])
        # <gather(x), y> == <x, scatter(y)>
        lhs = (T.gather_last(T.constant(x.data), idx).data * y.data).sum()
        rhs = (x.data * T.scatter_last(T.constant(y.data), idx, 5).data).sum()
        assert abs(lhs - rhs) < 1e-10


class TestCrossEntropy:
    def test_margin_limit(self):
        losses = []
        for margin in (1.0, 10.0, 50.0):
            logits = np.zeros((2, 4))
            logits[0, 1] = logits[1, 3] = margin
            losses.append(T.cross_entropy(T.constant(logits), [1, 3]).item())
        assert losses[0] > losses[1] > losses[2] and losses[2] < 1e-20

    def test_uniform(self):
        assert abs(T.cross_entropy(T.constant(np.zeros((3, 4))), [0, 1, 2]).item() - math.log(4)) < 1e-15

    def test_gradient_with_ignore(self, rng):
        x = param(rng, 5, 4)
        assert_fd(lambda: T.cross_entropy(x, [1, 0, 3, 0, 2], ignore_index=0), [x])

    def test_all_ignored(self):
        x = T.parameter(np.ones((2, 3)))
        loss = T.cross_entropy(x, [0, 0], ignore_index=0)
        loss.backward()
        assert loss.item() == 0.0
        np.testing.assert_array_equal(x.grad, 0.0)


class TestGraph:
    def test_diamond_accumulates(self, rng):
        x = param(rng, 3, 3)
        w = rng.normal(size=(3, 3))

        def f():
            y = T.relu(x)
            return T.sum_(T.mul(T.add(T.matmul(y, y), T.scale(y, 2.0)), T.constant(w)))

        assert_fd(f, [x])

    def test_backward_needs_scalar(self):
        with pytest.raises(ShapeError):
            T.parameter(np.ones(3)).backward()

    def test_no_grad_records_nothing(self):
        p = T.parameter(np.ones(2))
        with T.no_grad():
            y = T.scale(p, 2.0)
        assert not y.requires_grad and y._backward is None

    def test_graph_released_after_backward(self):
        p = T.parameter(np.ones(2))
        y = T.sum_(T.scale(p, 3.0))
        y.backward()
        assert y._parents == ()
        np.testing.assert_array_equal(p.grad, [3.0, 3.0])


class TestCheckGradients:
    def test_quadratic(self, rng):
        w = T.parameter(rng.uniform(-2, 2, 7), "w")
        report = check_gradients(lambda: T.sum_(T.mul(w, w)), [w])
        assert report["max_rel_err"] < 1e-9
        assert set(report["per_param"]) == {"w"}

    def test_detects_wrong_gradient(self, rng):
        w = T.parameter(rng.uniform(-2, 2, 4), "w")

        def broken():
            y = T.sum_(T.mul(w, w))
            y._backward = lambda g: (np.zeros(1),)  # drop the gradient
            return y

        assert check_gradients(broken, [w])["max_rel_err"] > 0.5

    def test_dropout_is_inverted_and_seeded(self):
        x = T.constant(np.ones((200, 50)))
        a = T.dropout(x, 0.1, np.random.default_rng(3), training=True).data
        b = T.dropout(x, 0.1, np.random.default_rng(3), training=True).data
        np.testing.assert_array_equal(a, b)
        assert abs(a.mean() - 1.0) < 0.02
        assert T.dropout(x, 0.1, np.random.default_rng(3), training=False) is x
