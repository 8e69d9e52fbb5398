import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from theoryforge import autodiff as ad

from oracles import finite_difference, random_net


def scalar_loss(net, x, w):
    """Weighted sum of outputs, a loss whose output gradient is ``w``."""
    return float(np.sum(ad.forward(net, x) * w))


class TestForward:
    def test_linear_layer(self):
        W = np.array([[1.0, 2.0], [3.0, -1.0]])
        net = ad.Mlp.from_layers([(W, [0.5, -0.5], ad.LINEAR)])
        np.testing.assert_allclose(ad.forward(net, [1.0, 1.0]), [3.5, 1.5])

    def test_leaky_relu(self):
        net = ad.Mlp.from_layers([(np.eye(2), np.zeros(2), ad.LEAKY_RELU)], leak=0.1)
        np.testing.assert_allclose(ad.forward(net, [2.0, -3.0]), [2.0, -0.3])

    def test_softmax_output_sums_to_one(self):
        rng = np.random.default_rng(0)
        net = ad.Mlp([3, 4, 5], [ad.LEAKY_RELU, ad.SOFTMAX], rng=rng)
        out = ad.forward(net, rng.normal(size=(7, 3)))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-15)

    def test_batch_matches_rows(self):
        rng = np.random.default_rng(1)
        net = random_net(rng, [4, 6, 3])
        X = rng.normal(size=(5, 4))
        batch = ad.forward(net, X)
        for x, row in zip(X, batch):
            np.testing.assert_allclose(ad.forward(net, x), row, rtol=1e-14)

    def test_shape_mismatch(self):
        net = ad.Mlp([3, 2], [ad.LINEAR], rng=np.random.default_rng(0))
        with pytest.raises(ad.ShapeError):
            ad.forward(net, np.zeros(4))

    def test_softmax_only_last(self):
        with pytest.raises(ValueError):
            ad.Mlp([2, 2, 2], [ad.SOFTMAX, ad.LINEAR])

    def test_nonfinite_params_rejected(self):
        with pytest.raises(ad.NonFiniteError):
            ad.Mlp([1, 1], [ad.LINEAR], params=[np.nan, 0.0])

    def test_dict_round_trip(self):
        net = random_net(np.random.default_rng(2), [3, 4, 2])
        back = ad.Mlp.from_dict(net.to_dict())
        np.testing.assert_array_equal(back.params, net.params)
        assert back.sizes == net.sizes and back.activations == net.activations


class TestBackward:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        net = random_net(rng)
        x = rng.normal(size=(3, net.input_dim))
        w = rng.normal(size=(3, net.output_dim))
        grad, _ = ad.backward(net, x, w)

        def loss(p):
            return scalar_loss(ad.Mlp(net.sizes, net.activations, params=p, leak=net.leak), x, w)

        fd = finite_difference(loss, net.params.copy())
        np.testing.assert_allclose(grad.flat, fd, rtol=1e-5, atol=1e-7)

    def test_input_gradient(self):
        rng = np.random.default_rng(3)
        net = random_net(rng, [4, 5, 2])
        x = rng.normal(size=4)
        w = rng.normal(size=2)
        _, gx = ad.backward(net, x, w)
        fd = finite_difference(lambda v: scalar_loss(net, v, w), x)
        np.testing.assert_allclose(gx, fd, rtol=1e-6, atol=1e-9)

    def test_softmax_gradient(self):
        rng = np.random.default_rng(4)
        net = ad.Mlp([3, 4, 3], [ad.LINEAR, ad.SOFTMAX], rng=rng)
        x = rng.normal(size=3)
        w = rng.normal(size=3)
        grad, _ = ad.backward(net, x, w)

        def loss(p):
            return scalar_loss(ad.Mlp(net.sizes, net.activations, params=p), x, w)

        np.testing.assert_allclose(grad.flat, finite_difference(loss, net.params.copy()), rtol=1e-5, atol=1e-9)

    def test_cache_path_agrees(self):
        rng = np.random.default_rng(5)
        net = random_net(rng, [6, 8, 8, 2])
        X = rng.normal(size=(10, 6))
        g = rng.normal(size=(10, 2))
        out, cache = ad.forward_with_cache(net, X)
        np.testing.assert_allclose(out, ad.forward(net, X), rtol=1e-14)
        np.testing.assert_allclose(ad.backward_from_cache(net, cache, g), ad.backward(net, X, g)[0].flat, rtol=1e-13)

    def test_gradient_shape_checked(self):
        net = ad.Mlp([2, 2], [ad.LINEAR], rng=np.random.default_rng(0))
        with pytest.raises(ad.ShapeError):
            ad.backward(net, np.zeros(2), np.zeros(3))


class TestOptimizers:
    def test_sgd_step(self):
        out = ad.sgd_step(np.array([1.0, 2.0]), np.array([0.5, -1.0]), 0.1)
        np.testing.assert_allclose(out, [0.95, 2.1])

    def test_sgd_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            ad.sgd_step(np.zeros(1), np.zeros(1), 0.0)

    def test_adam_three_steps_by_hand(self):
        alpha, b1, b2, e = 1e-3, 0.9, 0.999, 1e-8
        m = v = 0.0
        p = 0.0
        expected = []
        for t in (1, 2, 3):
            m = b1 * m + (1 - b1) * 1.0
            v = b2 * v + (1 - b2) * 1.0
            p = p - alpha * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + e)
            expected.append(p)
        state = ad.AdamState.fresh((1,), alpha=alpha)
        params = np.zeros(1)
        for want in expected:
            params, state = ad.adam_step(state, params, np.ones(1))
            assert abs(params[0] - want) < 1e-12
        assert state.t == 3

    def test_adam_step_is_pure(self):
        state = ad.AdamState.fresh((2,))
        params = np.ones(2)
        ad.adam_step(state, params, np.ones(2))
        assert state.t == 0
        np.testing.assert_array_equal(params, 1.0)

    def test_adam_rejects_nonfinite_gradient(self):
        with pytest.raises(ad.NonFiniteError):
            ad.adam_step(ad.AdamState.fresh((1,)), np.zeros(1), np.array([np.inf]))


class TestCrossEntropy:
    def test_value_and_gradient(self):
        z = np.array([1.0, 2.0, 0.5])
        loss, grad = ad.cross_entropy_softmax(z, 1)
        p = np.exp(z) / np.exp(z).sum()
        assert loss == pytest.approx(-np.log(p[1]), rel=1e-14)
        np.testing.assert_allclose(grad, p - np.eye(3)[1], atol=1e-15)

    def test_large_logits_stable(self):
        loss, grad = ad.cross_entropy_softmax(np.array([1000.0, 0.0]), 0)
        assert loss == pytest.approx(0.0, abs=1e-300)
        assert np.all(np.isfinite(grad))

    def test_batch_agrees_with_single(self):
        rng = np.random.default_rng(6)
        Z = rng.normal(size=(4, 3))
        t = np.array([0, 2, 1, 1])
        loss, grad = ad.cross_entropy_softmax_batch(Z, t)
        singles = [ad.cross_entropy_softmax(z, k) for z, k in zip(Z, t)]
        assert loss == pytest.approx(np.mean([s[0] for s in singles]), rel=1e-14)
        np.testing.assert_allclose(grad, np.stack([s[1] for s in singles]) / 4, atol=1e-15)

    def test_bad_target(self):
        with pytest.raises(IndexError):
            ad.cross_entropy_softmax(np.zeros(2), 2)
