"""Tests for the reverse-mode tensor engine."""

import numpy as np
import pytest

from seqrefine import autodiff as ad
from seqrefine.autodiff import (
    DomainError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    no_grad,
    zero_grads,
)

from fdcheck import check_gradients, max_relative_error, numeric_grad


def rand_param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestForwardBasics:
    def test_matmul_identity(self):
        """A @ I == A for random A."""
        rng = np.random.default_rng(42)
        a = Tensor(rng.standard_normal((4, 5)))
        eye = Tensor(np.eye(5))
        np.testing.assert_array_equal(ad.matmul(a, eye).data, a.data)

    def test_matmul_one_by_one(self):
        """[[2]] @ [[3]] == [[6]] and 1x1 times 1x1 keeps shape."""
        out = ad.matmul(Tensor([[2.0]]), Tensor([[3.0]]))
        assert out.shape == (1, 1)
        assert out.item() == 6.0

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_tanh_sigmoid_fixed_points(self):
        x = Tensor(np.zeros((1, 3)))
        np.testing.assert_array_equal(ad.tanh(x).data, np.zeros((1, 3)))
        np.testing.assert_array_equal(ad.sigmoid(x).data, np.full((1, 3), 0.5))

    def test_sigmoid_extreme_inputs_do_not_overflow(self):
        x = Tensor(np.array([[-1000.0, 1000.0]]))
        y = ad.sigmoid(x).data
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y, [[0.0, 1.0]], atol=1e-12)

    def test_log_rejects_non_positive(self):
        with pytest.raises(DomainError):
            ad.log(Tensor(np.array([[1.0, 0.0]])))
        with pytest.raises(DomainError):
            ad.log(Tensor(np.array([[-0.5]])))

    def test_storage_is_row_major_float64(self):
        t = Tensor(np.asfortranarray(np.arange(6, dtype=np.float32).reshape(2, 3)))
        assert t.data.dtype == np.float64
        assert t.data.flags["C_CONTIGUOUS"]


class TestSoftmaxRows:
    def test_uniform_logits_give_uniform_rows(self):
        s = ad.softmax_rows(Tensor(np.zeros((3, 4)))).data
        np.testing.assert_allclose(s, np.full((3, 4), 0.25), atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        """Row max subtraction keeps exp() finite for logits like 1000."""
        s = ad.softmax_rows(Tensor(np.array([[1000.0, 0.0, 0.0]]))).data
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s, [[1.0, 0.0, 0.0]], atol=1e-300)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(42)
        s = ad.softmax_rows(Tensor(rng.standard_normal((50, 7)) * 10)).data
        np.testing.assert_allclose(s.sum(axis=1), np.ones(50), atol=1e-12)

    def test_log_softmax_matches_log_of_softmax(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((5, 6)))
        np.testing.assert_allclose(
            ad.log_softmax_rows(x).data, np.log(ad.softmax_rows(x).data), atol=1e-12
        )

    def test_logsumexp_matches_direct(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 5)) * 3
        got = ad.logsumexp_rows(Tensor(x)).data
        want = np.log(np.exp(x).sum(axis=1, keepdims=True))
        np.testing.assert_allclose(got, want, atol=1e-12)


class TestBackward:
    def test_sum_gradient_is_ones(self):
        w = Tensor(np.arange(6, dtype=float).reshape(2, 3), requires_grad=True)
        with Tape():
            loss = ad.sum_all(w)
        backward(loss)
        np.testing.assert_array_equal(w.grad, np.ones((2, 3)))

    def test_quadratic_gradient(self):
        """d/dw sum(w*w) == 2w exactly."""
        rng = np.random.default_rng(42)
        w = rand_param(rng, 3, 4)
        with Tape():
            loss = ad.sum_all(ad.mul(w, w))
        backward(loss)
        np.testing.assert_array_equal(w.grad, 2.0 * w.data)

    def test_accumulation_doubles_without_zeroing(self):
        rng = np.random.default_rng(42)
        w = rand_param(rng, 2, 2)
        with Tape():
            loss = ad.sum_all(ad.tanh(w))
        backward(loss)
        first = w.grad.copy()
        backward(loss)
        np.testing.assert_array_equal(w.grad, 2.0 * first)

    def test_zero_grads_resets(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape():
            loss = ad.sum_all(w)
        backward(loss)
        zero_grads([w])
        assert w.grad is None

    def test_non_scalar_root_rejected(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape():
            y = ad.mul(w, 2.0)
        with pytest.raises(ShapeError):
            backward(y)

    def test_root_without_tape_rejected(self):
        w = Tensor(np.ones((1, 1)), requires_grad=True)
        with pytest.raises(ValueError):
            backward(w)

    def test_no_grad_suspends_recording(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            with no_grad():
                y = ad.mul(w, w)
        assert len(tape) == 0
        assert not y.requires_grad

    def test_reused_operand_accumulates_both_paths(self):
        """x used twice: d/dx sum(x@A + x@B) == colsums of A+B rows."""
        rng = np.random.default_rng(5)
        x = rand_param(rng, 2, 3)
        a = Tensor(rng.standard_normal((3, 4)))
        b = Tensor(rng.standard_normal((3, 4)))
        with Tape():
            loss = ad.sum_all(ad.add(ad.matmul(x, a), ad.matmul(x, b)))
        backward(loss)
        want = np.tile((a.data + b.data).sum(axis=1), (2, 1))
        np.testing.assert_allclose(x.grad, want, atol=1e-12)

    def test_forward_is_deterministic(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((5, 5)))

        def run():
            return ad.softmax_rows(ad.tanh(ad.matmul(x, x))).data.copy()

        np.testing.assert_array_equal(run(), run())


class TestGradientsAgainstFiniteDifferences:
    """Every op's analytic gradient is checked against the central-difference
    oracle; the oracle only re-runs forwards, never the tape."""

    def test_matmul_chain(self):
        rng = np.random.default_rng(42)
        params = {"a": rand_param(rng, 3, 4), "b": rand_param(rng, 4, 2)}

        def loss():
            return ad.sum_all(ad.tanh(ad.matmul(params["a"], params["b"])))

        errs = check_gradients(loss, params)
        assert max(errs.values()) < 1e-6, errs

    def test_elementwise_ops(self):
        rng = np.random.default_rng(42)
        params = {"x": Tensor(rng.uniform(0.2, 2.0, (3, 3)), requires_grad=True)}

        def loss():
            x = params["x"]
            y = ad.add(ad.mul(ad.sigmoid(x), ad.exp(ad.mul(x, 0.3))), ad.log(x))
            return ad.sum_all(ad.add(ad.relu(ad.sub(y, 1.0)), ad.tanh(y)))

        errs = check_gradients(loss, params)
        assert max(errs.values()) < 1e-6, errs

    def test_tanh_derivative_pinpoint(self):
        """d tanh / dx at 0.3 equals 1 - tanh(0.3)^2."""
        p = Tensor(np.array([[0.3]]), requires_grad=True)
        with Tape():
            y = ad.tanh(p)
        backward(y)
        np.testing.assert_allclose(p.grad, 1.0 - np.tanh(0.3) ** 2, atol=1e-12)
        num = numeric_grad(lambda: float(np.tanh(p.data[0, 0])), p)
        np.testing.assert_allclose(p.grad, num, atol=1e-9)

    def test_softmax_family(self):
        rng = np.random.default_rng(42)
        params = {"x": rand_param(rng, 4, 5)}
        gold = np.array([0, 2, 4, 1])

        def loss():
            x = params["x"]
            a = ad.sum_all(ad.mul(ad.softmax_rows(x), ad.softmax_rows(x)))
            b = ad.sum_all(ad.pick_rows(ad.log_softmax_rows(x), gold))
            c = ad.sum_all(ad.logsumexp_rows(ad.mul(x, 0.7)))
            return ad.add(ad.add(a, b), c)

        errs = check_gradients(loss, params)
        assert max(errs.values()) < 1e-6, errs

    def test_structural_ops(self):
        rng = np.random.default_rng(42)
        params = {
            "e": rand_param(rng, 6, 3),
            "w": rand_param(rng, 6, 4),
        }
        ids = np.array([0, 2, 2, 5])

        def loss():
            rows = ad.take_rows(params["e"], ids)
            both = ad.concat_cols([rows, ad.take_rows(params["w"], ids)])
            left = ad.slice_cols(both, 0, 3)
            top = ad.slice_rows(both, 0, 2)
            stacked = ad.concat_rows([top, top])
            return ad.add(
                ad.sum_all(ad.tanh(ad.matmul(left, ad.transpose(ad.slice_cols(stacked, 0, 3))))),
                ad.sum_all(ad.max_over_rows(both)),
            )

        errs = check_gradients(loss, params)
        assert max(errs.values()) < 1e-6, errs

    def test_layer_norm_and_scale(self):
        rng = np.random.default_rng(42)
        params = {
            "x": rand_param(rng, 4, 6),
            "gain": Tensor(rng.uniform(0.5, 1.5, (1, 6)), requires_grad=True),
            "bias": rand_param(rng, 1, 6),
        }

        def loss():
            normed = ad.layer_norm_rows(params["x"])
            y = ad.add(ad.scale_cols(normed, params["gain"]), params["bias"])
            return ad.sum_all(ad.mul(y, y))

        errs = check_gradients(loss, params)
        assert max(errs.values()) < 1e-5, errs

    def test_rel_gather(self):
        rng = np.random.default_rng(42)
        n = 4
        params = {"q": rand_param(rng, n, 2 * n - 1), "v": rand_param(rng, 1, 2 * n - 1)}

        def loss():
            pair = ad.add(ad.rel_gather(params["q"], n), ad.rel_gather(params["v"], n))
            return ad.sum_all(ad.softmax_rows(pair))

        errs = check_gradients(loss, params)
        assert max(errs.values()) < 1e-6, errs

    def test_composed_expression_sweep(self):
        """Mini network: embeddings -> affine -> layernorm -> softmax NLL."""
        rng = np.random.default_rng(42)
        params = {
            "emb": rand_param(rng, 5, 4),
            "w1": rand_param(rng, 4, 6),
            "b1": rand_param(rng, 1, 6),
            "w2": rand_param(rng, 6, 3),
        }
        ids = np.array([1, 3, 0])
        gold = np.array([2, 0, 1])

        def loss():
            h = ad.tanh(ad.add(ad.matmul(ad.take_rows(params["emb"], ids), params["w1"]), params["b1"]))
            logits = ad.matmul(ad.layer_norm_rows(h), params["w2"])
            nll = ad.neg(ad.sum_all(ad.pick_rows(ad.log_softmax_rows(logits), gold)))
            return ad.mul(nll, 1.0 / 3.0)

        errs = check_gradients(loss, params)
        assert max(errs.values()) < 1e-4, errs


class TestLayerNormRows:
    def test_rows_are_standardized(self):
        """Pre-gain/bias output has per-row mean 0 and variance 1 within 1e-10."""
        rng = np.random.default_rng(42)
        x = Tensor(rng.standard_normal((8, 16)) * 3 + 1)
        y = ad.layer_norm_rows(x).data
        np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.var(axis=1), 1.0, atol=1e-10)


class TestTapeSemantics:
    def test_every_entry_visited_once(self):
        """Reverse replay touches each recorded op exactly once."""
        calls = []
        w = Tensor(np.ones((1, 1)), requires_grad=True)
        with Tape() as tape:
            a = ad.mul(w, 3.0)
            b = ad.add(a, a)
            loss = ad.sum_all(b)
        # wrap vjps with counters
        wrapped = []
        for out, parents, vjp in tape._entries:
            def make(v):
                def counted(g):
                    calls.append(v)
                    return v(g)
                return counted
            wrapped.append((out, parents, make(vjp)))
        tape._entries = wrapped
        backward(loss)
        assert len(calls) == 3
        np.testing.assert_array_equal(w.grad, [[6.0]])

    def test_execution_order_is_topological(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            a = ad.tanh(w)
            b = ad.mul(a, a)
            c = ad.sum_all(b)
        outs = [id(entry[0]) for entry in tape._entries]
        assert outs.index(id(a)) < outs.index(id(b)) < outs.index(id(c))
