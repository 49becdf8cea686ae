import numpy as np
import pytest

from ecofollower.nets import (Adam, Mlp, PolicyLoadError, load_policy,
                              save_policy, soft_update)


def central_diff_grads(loss_fn, arrays, h=1e-5):
    """Central finite differences of loss_fn w.r.t. each array, in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn()
            flat[i] = orig - h
            fm = loss_fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rel=1e-4):
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        assert np.max(np.abs(a - n) / denom) < rel


class TestForward:
    def test_zero_weight_actor_outputs_zero(self):
        sizes = [3, 8, 1]
        weights = [np.zeros((3, 8)), np.zeros((8, 1))]
        biases = [np.zeros(8), np.zeros(1)]
        net = Mlp(sizes, weights, biases, output_activation="tanh")
        assert net.forward(np.array([1.0, -2.0, 0.5]))[0, 0] == 0.0

    def test_init_deterministic_under_seed(self):
        a = Mlp.init([3, 16, 1], np.random.default_rng(5), output_activation="tanh")
        b = Mlp.init([3, 16, 1], np.random.default_rng(5), output_activation="tanh")
        x = np.array([0.3, -0.1, 0.9])
        assert a.forward(x)[0, 0] == b.forward(x)[0, 0]

    def test_actor_output_always_squashed(self):
        rng = np.random.default_rng(11)
        net = Mlp.init([3, 16, 16, 1], rng, output_activation="tanh")
        states = rng.uniform(-5, 5, size=(10_000, 3))
        out = net.forward(states)
        assert np.all(out >= -1.0) and np.all(out <= 1.0)

    def test_single_linear_layer_is_analytic(self):
        w = np.array([[1.0], [2.0], [-0.5], [0.25]])
        b = np.array([0.125])
        net = Mlp([4, 1], [w], [b], output_activation="linear")
        x = np.array([1.0, 1.0, 2.0, 4.0])
        assert net.forward(x)[0, 0] == pytest.approx(1 + 2 - 1 + 1 + 0.125, abs=1e-15)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Mlp([3, 4], [np.zeros((3, 5))], [np.zeros(4)])


class TestGradients:
    def test_regression_loss_gradients_match_fd(self):
        rng = np.random.default_rng(23)
        net = Mlp.init([4, 8, 1], rng, output_activation="linear")
        x = rng.normal(size=(8, 4))
        y = rng.normal(size=(8, 1))

        def loss():
            q = net.forward(x)
            return float(np.mean((q - y) ** 2))

        q, cache = net.forward_cache(x)
        analytic = net.backward(cache, 2.0 * (q - y) / len(x))
        numeric = central_diff_grads(loss, net.params())
        assert_grads_close(analytic.weights + analytic.biases, numeric)

    def test_tanh_output_gradients_match_fd(self):
        rng = np.random.default_rng(29)
        net = Mlp.init([3, 8, 1], rng, output_activation="tanh")
        x = rng.normal(size=(6, 3))
        y = rng.uniform(-0.5, 0.5, size=(6, 1))

        def loss():
            return float(np.mean((net.forward(x) - y) ** 2))

        out, cache = net.forward_cache(x)
        analytic = net.backward(cache, 2.0 * (out - y) / len(x))
        numeric = central_diff_grads(loss, net.params())
        assert_grads_close(analytic.weights + analytic.biases, numeric)

    def test_input_gradients_match_fd(self):
        rng = np.random.default_rng(31)
        net = Mlp.init([4, 8, 1], rng, output_activation="linear")
        x = rng.normal(size=(1, 4))

        def q_of_x():
            return float(net.forward(x)[0, 0])

        _, cache = net.forward_cache(x)
        analytic = net.backward(cache, np.ones((1, 1))).inputs
        numeric = central_diff_grads(q_of_x, [x])[0]
        assert_grads_close([analytic], [numeric])

    def test_single_weight_perturbation_tracks_gradient(self):
        rng = np.random.default_rng(37)
        net = Mlp.init([4, 8, 1], rng, output_activation="linear")
        x = rng.normal(size=(1, 4))
        q0, cache = net.forward_cache(x)
        grads = net.backward(cache, np.ones((1, 1)))
        eps = 1e-6
        w = net.weights[0]
        w[2, 3] += eps
        q1 = net.forward(x)[0, 0]
        w[2, 3] -= eps
        assert (q1 - q0[0, 0]) / eps == pytest.approx(grads.weights[0][2, 3], rel=1e-4)


class TestSoftUpdate:
    def _pair(self):
        rng = np.random.default_rng(41)
        online = Mlp.init([3, 8, 1], rng)
        target = Mlp.init([3, 8, 1], rng)
        return online, target

    def test_tau_one_copies(self):
        online, target = self._pair()
        soft_update(target, online, tau=1.0)
        for tp, op in zip(target.params(), online.params()):
            np.testing.assert_array_equal(tp, op)

    def test_tau_zero_freezes(self):
        online, target = self._pair()
        before = [p.copy() for p in target.params()]
        soft_update(target, online, tau=0.0)
        for tp, prev in zip(target.params(), before):
            np.testing.assert_array_equal(tp, prev)

    def test_convex_combination(self):
        online, target = self._pair()
        before = [p.copy() for p in target.params()]
        soft_update(target, online, tau=0.3)
        for tp, prev, op in zip(target.params(), before, online.params()):
            lo = np.minimum(prev, op) - 1e-15
            hi = np.maximum(prev, op) + 1e-15
            assert np.all(tp >= lo) and np.all(tp <= hi)


class TestAdam:
    def test_first_step_matches_closed_form(self):
        p = np.array([1.0, -2.0])
        g = np.array([0.5, -0.25])
        opt = Adam([p], lr=0.01)
        opt.step([p], [g.copy()])
        # t=1: mhat = g, vhat = g^2 -> update = lr * g / (|g| + eps)
        expected = np.array([1.0, -2.0]) - 0.01 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(p, expected, rtol=1e-9)

    def test_descends_a_quadratic(self):
        p = np.array([5.0])
        opt = Adam([p], lr=0.1)
        for _ in range(500):
            opt.step([p], [2.0 * p])
        assert abs(p[0]) < 0.05


class TestPolicyFile:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(43)
        net = Mlp.init([3, 16, 16, 1], rng, output_activation="tanh")
        path = tmp_path / "policy.json"
        save_policy(net, path)
        loaded = load_policy(path)
        probes = rng.uniform(-2, 2, size=(100, 3))
        np.testing.assert_array_equal(net.forward(probes), loaded.forward(probes))

    def test_truncated_file_is_load_error(self, tmp_path):
        rng = np.random.default_rng(47)
        net = Mlp.init([3, 8, 1], rng)
        path = tmp_path / "policy.json"
        save_policy(net, path)
        path.write_text(path.read_text()[: 40])
        with pytest.raises(PolicyLoadError):
            load_policy(path)

    def test_wrong_sizes_is_explicit_error(self, tmp_path):
        net = Mlp.init([3, 8, 1], np.random.default_rng(53))
        path = tmp_path / "policy.json"
        save_policy(net, path)
        with pytest.raises(PolicyLoadError, match="sizes"):
            load_policy(path, expect_sizes=[3, 64, 64, 1])

    def test_missing_version_rejected(self, tmp_path):
        path = tmp_path / "policy.json"
        path.write_text('{"sizes": [3, 1]}')
        with pytest.raises(PolicyLoadError, match="version"):
            load_policy(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(PolicyLoadError):
            load_policy(tmp_path / "nope.json")
