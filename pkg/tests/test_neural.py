import numpy as np
import pytest

from xlsent.errors import NumericalError
from xlsent.neural import (
    TrainSpec,
    backward,
    build_net,
    count_params,
    cosine_mse,
    forward,
    grad_check,
    identity_net,
    load_net,
    loss_and_grads,
    mse,
    save_net,
    softmax,
    softmax_cross_entropy,
    train,
)


def random_net(seed, in_dim=4, hidden=5, out=3, act="tanh"):
    net = build_net([in_dim, hidden, hidden, out], [act, act, "identity"], seed=seed)
    # nonzero biases keep outputs off the origin, where cosine is discontinuous
    rng = np.random.default_rng(seed + 1000)
    for layer in net.layers:
        layer.bias[:] = rng.normal(scale=0.1, size=layer.bias.shape)
    return net


def blobs(n, dim, sep, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    centers = np.zeros((2, dim))
    centers[0, 0], centers[1, 0] = -sep, sep
    x = centers[y] + rng.normal(size=(n, dim))
    return list(zip(x, y))


class TestShapes:
    def test_classifier_param_count(self):
        net = build_net([100, 300, 300, 2], ["relu", "relu", "identity"], seed=0)
        assert count_params(net) == 121_202

    def test_identity_net(self):
        x = np.random.default_rng(0).normal(size=(3, 5))
        out, _ = forward(identity_net(5, 2), x)
        np.testing.assert_array_equal(out, x)

    def test_single_vector_round_trip(self):
        net = random_net(0)
        out, cache = forward(net, np.ones(4))
        assert out.shape == (3,)
        grads, g_in = backward(net, cache, np.ones(3))
        assert g_in.shape == (4,) and grads[0][0].shape == (4, 5)

    def test_bad_input(self):
        with pytest.raises(ValueError):
            forward(random_net(0), np.ones(5))
        with pytest.raises(NumericalError):
            forward(random_net(0), [np.nan, 0, 0, 0])

    def test_mismatched_dims_rejected(self):
        with pytest.raises(ValueError):
            build_net([3, 4], ["relu", "relu"])


class TestLosses:
    def test_softmax_rows_sum_to_one(self):
        p = softmax(np.array([[1000.0, 0.0], [-5.0, 5.0]]))
        np.testing.assert_allclose(p.sum(axis=1), 1.0)
        assert np.all(np.isfinite(p))

    def test_cross_entropy_uniform(self):
        loss, grad = softmax_cross_entropy(np.zeros((2, 2)), [0, 1])
        assert loss == pytest.approx(np.log(2))
        np.testing.assert_allclose(grad, [[-0.25, 0.25], [0.25, -0.25]])

    def test_mse_gradient_closed_form(self):
        rng = np.random.default_rng(1)
        out, tgt = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        loss, grad = mse(out, tgt)
        assert loss == pytest.approx(np.sum((out - tgt) ** 2) / 4)
        np.testing.assert_allclose(grad, 2 * (out - tgt) / 4)

    def test_cosine_mse_numeric(self):
        rng = np.random.default_rng(2)
        u, v, s = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.uniform(size=3)
        _, du, _ = cosine_mse(u, v, s)
        eps = 1e-6
        num = np.zeros_like(u)
        for idx in np.ndindex(u.shape):
            up, dn = u.copy(), u.copy()
            up[idx] += eps
            dn[idx] -= eps
            num[idx] = (cosine_mse(up, v, s)[0] - cosine_mse(dn, v, s)[0]) / (2 * eps)
        np.testing.assert_allclose(du, num, atol=1e-8)

    def test_cosine_zero_row(self):
        loss, du, dv = cosine_mse(np.zeros((1, 3)), np.ones((1, 3)), [0.5])
        assert loss == pytest.approx(0.25)
        assert not du.any() and not dv.any()


class TestGradCheck:
    @pytest.mark.parametrize("seed", range(10))
    def test_cross_entropy(self, seed):
        rng = np.random.default_rng(100 + seed)
        act = ("tanh", "relu")[seed % 2]
        net = random_net(seed, act=act)
        x = rng.normal(size=(6, 4))
        assert grad_check(net, x, rng.integers(0, 3, size=6), "softmax_cross_entropy") < 1e-4

    @pytest.mark.parametrize("seed", range(10))
    def test_cosine_mse(self, seed):
        rng = np.random.default_rng(200 + seed)
        act = ("tanh", "relu")[seed % 2]
        net = random_net(seed, out=4, act=act)
        x = rng.normal(size=(5, 2, 4))
        assert grad_check(net, x, rng.uniform(size=5), "mse_of_cosine") < 1e-4

    def test_mse_loss(self):
        rng = np.random.default_rng(5)
        assert grad_check(random_net(5), rng.normal(size=(4, 4)), rng.normal(size=(4, 3)), "mse") < 1e-4

    def test_refuses_dropout(self):
        net = build_net([4, 5, 2], ["relu", "identity"], dropout_rate=0.5, dropout_position=1)
        with pytest.raises(ValueError):
            grad_check(net, np.ones((1, 4)), [0], "softmax_cross_entropy")
        assert grad_check(net.without_dropout(), np.ones((2, 4)), [0, 1], "softmax_cross_entropy") < 1e-4


class TestDropout:
    def test_train_mask_statistics(self):
        net = build_net([200, 200], ["identity"], dropout_rate=0.5, dropout_position=0, seed=0)
        net.layers[0].weights[:] = np.eye(200)
        x = np.ones((500, 200))
        out, _ = forward(net, x, "train", seed=7)
        assert abs(np.mean(out == 0) - 0.5) < 0.02
        assert abs(out.mean() - 1.0) < 0.02

    def test_infer_is_deterministic(self):
        net = build_net([4, 5, 2], ["relu", "identity"], dropout_rate=0.5, dropout_position=1, seed=1)
        x = np.ones((3, 4))
        a, _ = forward(net, x)
        b, _ = forward(net, x)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, forward(net.without_dropout(), x)[0])

    def test_seeded_train_mode(self):
        net = build_net([4, 5, 2], ["relu", "identity"], dropout_rate=0.3, dropout_position=1, seed=1)
        x = np.ones((3, 4))
        np.testing.assert_array_equal(forward(net, x, "train", 3)[0], forward(net, x, "train", 3)[0])

    def test_mask_in_backward(self):
        net = build_net([3, 3], ["identity"], dropout_rate=0.5, dropout_position=0, seed=2)
        x = np.ones((1, 3))
        _, cache = forward(net, x, "train", seed=1)
        _, g = backward(net, cache, np.ones((1, 3)))
        np.testing.assert_allclose(g, (np.ones((1, 3)) @ net.layers[0].weights.T) * cache.mask)


class TestTrain:
    def test_separable_blobs(self):
        data = blobs(600, 10, 3.0, 0)
        net = build_net([10, 16, 2], ["relu", "identity"], seed=0)
        trained, trace = train(net, data, TrainSpec(epochs=3, batch_size=32, learning_rate=0.1))
        x = np.stack([d[0] for d in data])
        y = np.array([d[1] for d in data])
        acc = np.mean(np.argmax(forward(trained, x)[0], axis=1) == y)
        assert acc >= 0.99
        assert trace[-1] < trace[0]

    def test_does_not_mutate_input(self):
        net = random_net(0)
        before = [l.weights.copy() for l in net.layers]
        train(net, [(np.ones(4), 1)], TrainSpec(epochs=2))
        for w, l in zip(before, net.layers):
            np.testing.assert_array_equal(w, l.weights)

    def test_deterministic(self):
        data = blobs(50, 4, 1.0, 1)
        net = build_net([4, 6, 2], ["relu", "identity"], dropout_rate=0.5, dropout_position=1, seed=0)
        a, ta = train(net, data, TrainSpec(seed=4))
        b, tb = train(net, data, TrainSpec(seed=4))
        assert ta == tb
        np.testing.assert_array_equal(a.layers[0].weights, b.layers[0].weights)

    def test_sgd_step_matches_gradient(self):
        net = random_net(3)
        x, y = np.ones((1, 4)), np.array([2])
        _, grads = loss_and_grads(net, x, y, "softmax_cross_entropy")
        trained, _ = train(net, [(x[0], 2)], TrainSpec(epochs=1, learning_rate=0.5))
        np.testing.assert_allclose(trained.layers[0].weights, net.layers[0].weights - 0.5 * grads[0][0])

    def test_divergence_raises(self):
        net = build_net([1, 1], ["identity"], seed=0)
        with pytest.raises(NumericalError), np.errstate(over="ignore", invalid="ignore"):
            train(net, [(np.array([1e200]), np.array([0.0]))], TrainSpec(loss="mse", epochs=3))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            TrainSpec(loss="hinge")
        with pytest.raises(ValueError):
            TrainSpec(batch_size=0)


def test_save_load_exact(tmp_path):
    net = build_net([5, 7, 2], ["tanh", "identity"], dropout_rate=0.25, dropout_position=1, seed=9)
    save_net(net, tmp_path / "net")
    back = load_net(tmp_path / "net")
    assert back.dims == net.dims and back.dropout_rate == 0.25 and back.dropout_position == 1
    for a, b in zip(net.layers, back.layers):
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.bias, b.bias)
        assert a.activation == b.activation
