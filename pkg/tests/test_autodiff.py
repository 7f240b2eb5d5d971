"""Engine-level checks: every primitive's backward against central differences."""

import numpy as np
import pytest

from snapscore.autodiff import Tensor, concatenate, no_grad

from gradcheck import check_input_grad

rng = np.random.default_rng(20240917)


def arr(*shape):
    return rng.normal(size=shape)


class TestPrimitiveGradients:
    def test_add_broadcast(self):
        b = Tensor(arr(5), requires_grad=True)
        check_input_grad(lambda x: x + b, arr(3, 4, 5), rng)

    def test_scalar_add_mul(self):
        check_input_grad(lambda x: (x + 3.5) * -1.25, arr(4, 6), rng)

    def test_mul_broadcast(self):
        b = Tensor(arr(1, 6), requires_grad=True)
        check_input_grad(lambda x: x * b, arr(5, 6), rng)

    def test_sub_div(self):
        d = Tensor(np.abs(arr(4)) + 1.0, requires_grad=True)
        check_input_grad(lambda x: (x - d) / 2.5, arr(3, 4), rng)

    def test_pow(self):
        x = np.abs(arr(4, 4)) + 0.5
        check_input_grad(lambda t: t ** -0.5, x, rng)
        check_input_grad(lambda t: t ** 2.0, x, rng)

    def test_matmul_2d(self):
        w = Tensor(arr(6, 3), requires_grad=True)
        check_input_grad(lambda x: x @ w, arr(5, 6), rng)

    def test_matmul_batched(self):
        b = Tensor(arr(2, 3, 4, 7), requires_grad=True)
        check_input_grad(lambda x: x @ b, arr(2, 3, 5, 4), rng)

    def test_matmul_weight_grad(self):
        x = arr(4, 6)
        w = Tensor(arr(6, 2), requires_grad=True)
        out = Tensor(x) @ w
        proj = arr(4, 2)
        (out * Tensor(proj)).sum().backward()
        expected = x.T @ proj
        np.testing.assert_allclose(w.grad, expected, atol=1e-12)

    def test_exp_log(self):
        check_input_grad(lambda x: x.exp(), arr(3, 5), rng)
        check_input_grad(lambda x: x.log(), np.abs(arr(3, 5)) + 0.5, rng)

    def test_gelu(self):
        check_input_grad(lambda x: x.gelu(), arr(4, 8) * 2, rng)

    def test_clamp_min_away_from_boundary(self):
        x = arr(5, 5)
        x[np.abs(x) < 0.1] += 0.2  # keep probes off the kink
        check_input_grad(lambda t: t.clamp_min(0.0), x, rng)

    def test_softmax(self):
        check_input_grad(lambda x: x.softmax(axis=-1), arr(3, 4, 6), rng)

    def test_softmax_rows_sum_to_one(self):
        y = Tensor(arr(7, 9) * 10).softmax(axis=-1)
        np.testing.assert_allclose(y.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_sum_mean(self):
        check_input_grad(lambda x: x.sum(axis=1), arr(3, 4, 2), rng)
        check_input_grad(lambda x: x.mean(axis=(0, 2), keepdims=True), arr(3, 4, 2), rng)
        check_input_grad(lambda x: x.mean(), arr(6,), rng)

    def test_reshape_transpose(self):
        check_input_grad(lambda x: x.reshape(6, 4), arr(2, 3, 4), rng)
        check_input_grad(lambda x: x.transpose(2, 0, 1), arr(2, 3, 4), rng)

    def test_getitem_slice(self):
        check_input_grad(lambda x: x[:, 1:3, :], arr(2, 5, 3), rng)

    def test_concatenate(self):
        b = Tensor(arr(2, 3), requires_grad=True)

        def fn(x):
            return concatenate([x, b, x], axis=0)

        check_input_grad(fn, arr(4, 3), rng)

    def test_composite_chain(self):
        w = Tensor(arr(6, 6), requires_grad=True)

        def fn(x):
            h = (x @ w).gelu().softmax(axis=-1)
            return (h * h).mean(axis=0)

        check_input_grad(fn, arr(5, 6), rng)


class TestEngineBehavior:
    def test_backward_requires_scalar(self):
        t = Tensor(arr(3), requires_grad=True)
        with pytest.raises(ValueError):
            (t * 2.0).backward()

    def test_gradient_accumulation_over_fanout(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x * 3.0 + x * 4.0  # dy/dx = 7
        y.sum().backward()
        assert x.grad[0] == pytest.approx(7.0)

    def test_shared_buffer_not_aliased(self):
        # a + b routes the same incoming gradient array to both parents; a
        # later second accumulation into one must not corrupt the other.
        a = Tensor(arr(4), requires_grad=True)
        b = Tensor(arr(4), requires_grad=True)
        out = (a + b).sum() + a.sum()  # a gets two contributions, b one
        out.backward()
        np.testing.assert_allclose(a.grad, 2.0)
        np.testing.assert_allclose(b.grad, 1.0)

    def test_no_grad_skips_graph(self):
        x = Tensor(arr(3), requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert y._parents == ()

    def test_float32_propagates(self):
        x = Tensor(arr(3, 4).astype(np.float32))
        w = Tensor(arr(4, 2).astype(np.float32))
        y = ((x @ w + 1.5) * 0.5).gelu().softmax(axis=-1)
        assert y.data.dtype == np.float32

    def test_int_input_promotes_to_float64(self):
        assert Tensor(np.arange(4)).data.dtype == np.float64

    def test_softmax_extreme_logits_stay_normalized(self):
        x = Tensor(np.array([[0.0, -500.0, 800.0], [0.0, 0.0, 0.0]]))
        y = x.softmax(axis=-1)
        np.testing.assert_allclose(y.data.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(np.isfinite(y.data))
