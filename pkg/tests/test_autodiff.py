import math

import numpy as np
import pytest

from conftest import numeric_grad, rel_err
from ecmt import autodiff as ad
from ecmt.errors import DimensionError, NumericError


class TestMatmul:
    def test_identity(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = ad.matmul(ad.Tensor(np.eye(2)), ad.Tensor(b))
        np.testing.assert_array_equal(out.value, b)

    def test_direct_arithmetic(self):
        out = ad.matmul(ad.Tensor([[1.0, 2.0], [3.0, 4.0]]), ad.Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.value, [[3.0], [7.0]])

    def test_grad_of_sum_is_ones_bt(self):
        rng = np.random.default_rng(0)
        a = ad.Tensor(rng.normal(size=(5, 7)))
        b = ad.Tensor(rng.normal(size=(7, 3)))
        ad.backward(ad.reduce_sum(ad.matmul(a, b)))
        np.testing.assert_allclose(a.grad, np.ones((5, 3)) @ b.value.T, rtol=1e-12)

    def test_finite_differences(self):
        rng = np.random.default_rng(1)
        a = ad.Tensor(rng.normal(size=(5, 7)))
        b = ad.Tensor(rng.normal(size=(7, 3)))
        out = ad.matmul(a, b)
        ad.backward(ad.reduce_mean(ad.mul(out, out)))
        num = numeric_grad(lambda v: np.mean((v @ b.value) ** 2), a.value)
        assert rel_err(a.grad, num) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))


class TestConv2d:
    def test_zero_kernel(self):
        x = ad.Tensor(np.random.default_rng(0).normal(size=(2, 3, 4, 4)))
        out = ad.conv2d(x, ad.Tensor(np.zeros((5, 3, 3, 3))))
        np.testing.assert_array_equal(out.value, np.zeros((2, 5, 4, 4)))

    def test_identity_kernel(self):
        x = ad.Tensor(np.random.default_rng(1).normal(size=(1, 1, 6, 6)))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        out = ad.conv2d(x, ad.Tensor(k))
        np.testing.assert_array_equal(out.value, x.value)

    def test_finite_differences(self):
        rng = np.random.default_rng(2)
        x = ad.Tensor(rng.normal(size=(1, 2, 4, 4)))
        k = ad.Tensor(rng.normal(size=(3, 2, 3, 3)))
        out = ad.conv2d(x, k)
        ad.backward(ad.reduce_mean(ad.mul(out, out)))

        def loss(xv, kv):
            return np.mean(ad.conv2d(ad.Tensor(xv), ad.Tensor(kv)).value ** 2)

        assert rel_err(x.grad, numeric_grad(lambda v: loss(v, k.value), x.value)) < 1e-6
        assert rel_err(k.grad, numeric_grad(lambda v: loss(x.value, v), k.value)) < 1e-6

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ad.conv2d(ad.Tensor(np.ones((1, 2, 4, 4))), ad.Tensor(np.ones((3, 5, 3, 3))))


class TestRelu:
    def test_values(self):
        out = ad.relu(ad.Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.value, [0.0, 0.0, 2.0])

    def test_all_negative(self):
        out = ad.relu(ad.Tensor([-3.0, -1.0, -0.5]))
        np.testing.assert_array_equal(out.value, np.zeros(3))

    def test_subgradient(self):
        x = ad.Tensor([-1.0, 2.0])
        ad.backward(ad.reduce_sum(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_gradient_zero_at_zero(self):
        x = ad.Tensor([0.0])
        ad.backward(ad.reduce_sum(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0])


class TestChannelMean:
    def test_single_channel_identity(self):
        x = np.random.default_rng(0).normal(size=(2, 1, 3, 3))
        out = ad.channel_mean(ad.Tensor(x))
        np.testing.assert_array_equal(out.value, x)

    def test_direct_arithmetic(self):
        # two channels, two cells: (1,3) -> 2 and (5,7) -> 6
        x = np.array([[[1.0, 5.0], [3.0, 7.0]]])
        out = ad.channel_mean(ad.Tensor(x))
        np.testing.assert_array_equal(out.value, [[[2.0, 6.0]]])

    def test_gradient_one_over_c(self):
        x = ad.Tensor(np.random.default_rng(3).normal(size=(2, 4, 3, 3)))
        ad.backward(ad.reduce_sum(ad.channel_mean(x)))
        np.testing.assert_allclose(x.grad, np.full(x.value.shape, 0.25), rtol=0)
        num = numeric_grad(
            lambda v: ad.channel_mean(ad.Tensor(v)).value.sum(), x.value
        )
        assert rel_err(x.grad, num) < 1e-6

    def test_rank_error(self):
        with pytest.raises(DimensionError):
            ad.channel_mean(ad.Tensor(np.ones(3)))


class TestMse:
    def test_zero(self):
        a = np.random.default_rng(0).normal(size=(3, 2))
        assert ad.mse(ad.Tensor(a), ad.Tensor(a.copy())).item() == 0.0

    def test_direct(self):
        assert ad.mse(ad.Tensor(np.ones(4)), ad.Tensor(np.zeros(4))).item() == 1.0

    def test_gradient(self):
        rng = np.random.default_rng(4)
        a = ad.Tensor(rng.normal(size=(3, 4)))
        b = ad.Tensor(rng.normal(size=(3, 4)))
        ad.backward(ad.mse(a, b))
        np.testing.assert_allclose(a.grad, 2 * (a.value - b.value) / 12, rtol=1e-12)
        num = numeric_grad(lambda v: np.mean((v - b.value) ** 2), a.value)
        assert rel_err(a.grad, num) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.mse(ad.Tensor(np.ones(3)), ad.Tensor(np.ones(4)))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = ad.softmax_cross_entropy(ad.Tensor(np.zeros((2, 5))), np.array([1, 3]))
        assert abs(loss.item() - math.log(5)) < 1e-12

    def test_saturated(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 1000.0
        loss = ad.softmax_cross_entropy(ad.Tensor(logits), np.array([2]))
        assert loss.item() < 1e-12

    def test_gradient_softmax_minus_onehot(self):
        rng = np.random.default_rng(5)
        logits = ad.Tensor(rng.normal(size=(3, 4)))
        labels = np.array([0, 3, 1])
        ad.backward(ad.softmax_cross_entropy(logits, labels))
        num = numeric_grad(
            lambda v: ad.softmax_cross_entropy(ad.Tensor(v), labels).item(), logits.value
        )
        assert rel_err(logits.grad, num) < 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            ad.softmax_cross_entropy(ad.Tensor(np.zeros((1, 3))), np.array([3]))


class TestL1:
    def test_zero(self):
        a = np.random.default_rng(0).normal(size=5)
        assert ad.l1(ad.Tensor(a), ad.Tensor(a.copy())).item() == 0.0

    def test_direct(self):
        assert ad.l1(ad.Tensor([2.0]), ad.Tensor([-1.0])).item() == 3.0

    def test_gradient_sign(self):
        rng = np.random.default_rng(6)
        a = ad.Tensor(rng.normal(size=8))
        b = ad.Tensor(rng.normal(size=8))
        ad.backward(ad.l1(a, b))
        np.testing.assert_allclose(a.grad, np.sign(a.value - b.value) / 8, rtol=0)
        num = numeric_grad(lambda v: np.mean(np.abs(v - b.value)), a.value)
        assert rel_err(a.grad, num) < 1e-6


class TestBackward:
    def test_sum_gives_ones(self):
        p = ad.Tensor(np.random.default_rng(0).normal(size=(3, 2)))
        ad.backward(ad.reduce_sum(p))
        np.testing.assert_array_equal(p.grad, np.ones((3, 2)))

    def test_accumulation_doubles(self):
        p = ad.Tensor(np.random.default_rng(1).normal(size=4))
        loss = ad.reduce_sum(ad.mul(p, p))
        ad.backward(loss)
        first = p.grad.copy()
        ad.backward(loss)
        np.testing.assert_array_equal(p.grad, 2 * first)

    def test_composite_finite_differences(self):
        rng = np.random.default_rng(7)
        w = ad.Tensor(rng.normal(size=(4, 3)))
        x = ad.Tensor(rng.normal(size=(2, 4)))
        y = rng.normal(size=(2, 3))
        ad.backward(ad.mse(ad.matmul(x, w), ad.Tensor(y)))
        num = numeric_grad(lambda v: np.mean((x.value @ v - y) ** 2), w.value)
        assert rel_err(w.grad, num) < 1e-6

    def test_linearity_of_accumulation(self):
        rng = np.random.default_rng(8)
        init = rng.normal(size=5)
        y1, y2 = rng.normal(size=5), rng.normal(size=5)

        p = ad.Tensor(init.copy())
        ad.backward(ad.add(ad.mse(p, ad.Tensor(y1)), ad.mse(p, ad.Tensor(y2))))
        combined = p.grad.copy()

        q = ad.Tensor(init.copy())
        ad.backward(ad.mse(q, ad.Tensor(y1)))
        ad.backward(ad.mse(q, ad.Tensor(y2)))
        np.testing.assert_array_equal(combined, q.grad)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ValueError):
            ad.backward(ad.Tensor(np.ones(3)))

    def test_forward_determinism(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 3, 4, 4))
        k = rng.normal(size=(2, 3, 3, 3))
        a = ad.conv2d(ad.Tensor(x), ad.Tensor(k)).value
        b = ad.conv2d(ad.Tensor(x.copy()), ad.Tensor(k.copy())).value
        assert np.array_equal(a, b)

    def test_zero_grads(self):
        p = ad.Tensor(np.ones(3))
        ad.backward(ad.reduce_sum(p))
        ad.zero_grads([p])
        np.testing.assert_array_equal(p.grad, np.zeros(3))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = ad.Tensor(np.array([1.0, -2.0]), name="p")
        state = ad.AdamState(lr=0.1)
        ad.adam_step({"p": p}, state, grads={"p": np.zeros(2)})
        np.testing.assert_array_equal(p.value, [1.0, -2.0])
        assert state.step == 1

    def test_first_step_matches_hand_update(self):
        # one scalar step: delta = -lr * g / (|g| + eps)
        for g in (0.37, -2.2):
            p = ad.Tensor(np.array(1.5), name="p")
            state = ad.AdamState(lr=0.01)
            ad.adam_step({"p": p}, state, grads={"p": np.array(g)})
            expected = 1.5 - 0.01 * g / (abs(g) + state.eps)
            assert abs(p.value - expected) < 1e-15

    def test_constant_gradient_descends(self):
        # simulate f(p) = p*g with constant gradient g: p*g must fall monotonically
        g = np.array(0.8)
        p = ad.Tensor(np.array(0.3), name="p")
        state = ad.AdamState(lr=0.05)
        values = [float(p.value * g)]
        for _ in range(100):
            ad.adam_step({"p": p}, state, grads={"p": g})
            values.append(float(p.value * g))
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_non_finite_gradient_names_parameter(self):
        p = ad.Tensor(np.ones(2), name="enc0.w")
        with pytest.raises(NumericError, match="enc0.w"):
            ad.adam_step({"enc0.w": p}, ad.AdamState(), grads={"enc0.w": np.array([1.0, np.nan])})
