import math

import numpy as np
import pytest

from gradcheck import max_rel_error, rel_error
from pvess.neural import (
    DenseNet,
    OptimizerState,
    clip_grad_norm,
    digest,
    gaussian_logprob_and_entropy,
    load_arrays,
    net_arrays,
    net_from_arrays,
    optimizer_step,
    save_arrays,
)

SHAPES = [((4, 64, 64), "tanh"), ((64, 4), "linear"), ((64, 1), "linear"), ((64, 32, 64), "linear")]


def weighted_loss(net, x, g):
    return float(np.sum(net(x) * g))


class TestDenseNet:
    def test_zero_weights_give_biases(self, rng):
        net = DenseNet((3, 2), rng)
        net.params[0][:] = 0
        net.params[1][:] = [1.5, -2.0]
        assert np.array_equal(net(rng.normal(size=(5, 3))), np.tile([1.5, -2.0], (5, 1)))

    def test_identity_layer(self, rng):
        net = DenseNet((3, 3), rng)
        net.params[0][:] = np.eye(3)
        x = rng.normal(size=3)
        assert np.array_equal(net(x), x)

    def test_pure_and_batched(self, rng):
        net = DenseNet((4, 8, 2), rng, out_activation="tanh")
        x = rng.normal(size=(6, 4))
        assert np.array_equal(net(x), net(x))
        assert np.allclose(net(x[2]), net(x)[2], atol=1e-15)

    def test_width_mismatch(self, rng):
        with pytest.raises(ValueError):
            DenseNet((4, 2), rng)(np.ones(3))

    @pytest.mark.parametrize("sizes, act", SHAPES)
    def test_backward_matches_finite_differences(self, sizes, act):
        rng = np.random.default_rng(sum(sizes))
        for _ in range(25):
            net = DenseNet(sizes, rng, out_activation=act)
            x = rng.normal(size=(5, sizes[0]))
            g = rng.normal(size=(5, sizes[-1]))
            out, cache = net.forward(x)
            grads, gx = net.backward(cache, g)
            assert max_rel_error(lambda: weighted_loss(net, x, g), net.params, grads, rng) < 1e-4
            # input gradient through the same oracle
            assert max_rel_error(lambda: weighted_loss(net, x, g), [x], [gx], rng) < 1e-4

    def test_zero_output_gradient(self, rng):
        net = DenseNet((4, 8, 3), rng)
        _, cache = net.forward(rng.normal(size=(2, 4)))
        grads, _ = net.backward(cache, np.zeros((2, 3)))
        assert all(np.all(g == 0) for g in grads)

    def test_linear_quadratic_closed_form(self, rng):
        net = DenseNet((3, 2), rng)
        x = rng.normal(size=(7, 3))
        y = rng.normal(size=(7, 2))
        out, cache = net.forward(x)
        grads, _ = net.backward(cache, 2 * (out - y))
        w, b = net.params
        assert np.allclose(grads[0], 2 * x.T @ (x @ w + b - y))
        assert np.allclose(grads[1], 2 * (x @ w + b - y).sum(axis=0))

    def test_stale_cache_detected(self, rng):
        net = DenseNet((2, 2), rng)
        _, cache = net.forward(np.ones(2))
        net.params[0] = net.params[0].copy()
        with pytest.raises(RuntimeError):
            net.backward(cache, np.ones(2))

    def test_bad_construction(self):
        with pytest.raises(ValueError):
            DenseNet((4,))
        with pytest.raises(ValueError):
            DenseNet((4, 2), out_activation="relu")


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = [np.array([1.0, -2.0])]
        state = OptimizerState.for_params(p, lr=0.1)
        optimizer_step(p, [np.zeros(2)], state)
        assert np.array_equal(p[0], [1.0, -2.0])

    def test_first_step_is_sign_times_lr(self):
        p = [np.array([1.0, 1.0, 1.0])]
        g = np.array([3.0, -0.01, 1e3])
        state = OptimizerState.for_params(p, lr=1e-3)
        optimizer_step(p, [g], state)
        assert np.allclose(p[0] - 1.0, -1e-3 * np.sign(g), rtol=1e-5)

    def test_matches_reference(self, rng):
        p = [rng.normal(size=3)]
        ref = p[0].copy()
        m = v = np.zeros(3)
        state = OptimizerState.for_params(p, lr=0.01)
        for t in range(1, 6):
            g = rng.normal(size=3)
            optimizer_step(p, [g.copy()], state)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert np.allclose(p[0], ref, atol=1e-14)

    def test_quadratic_decreases(self):
        p = [np.array([3.0, -4.0])]
        state = OptimizerState.for_params(p, lr=0.05)
        losses = []
        for _ in range(50):
            losses.append(float(np.sum(p[0] ** 2)))
            optimizer_step(p, [2 * p[0]], state)
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_rejects_nonfinite(self):
        p = [np.zeros(2)]
        with pytest.raises(FloatingPointError):
            optimizer_step(p, [np.array([np.nan, 0.0])], OptimizerState.for_params(p))

    def test_clip_grad_norm(self):
        grads = [np.array([3.0, 0.0]), np.array([4.0])]
        norm = clip_grad_norm(grads, 1.0)
        assert norm == 5.0
        assert math.isclose(math.sqrt(sum(float(np.sum(g * g)) for g in grads)), 1.0, rel_tol=1e-9)


class TestGaussian:
    def test_closed_forms(self):
        logp, ent = gaussian_logprob_and_entropy(np.zeros(1), np.zeros((1, 1)), np.zeros((1, 1)))
        assert logp[0] == pytest.approx(-0.5 * math.log(2 * math.pi)) and logp[0] == pytest.approx(-0.9189, abs=1e-4)
        assert ent == pytest.approx(0.5 * math.log(2 * math.pi * math.e)) and ent == pytest.approx(1.4189, abs=1e-4)
        _, ent2 = gaussian_logprob_and_entropy(np.full(3, math.log(2)), np.zeros((1, 3)), np.zeros((1, 3)))
        _, ent1 = gaussian_logprob_and_entropy(np.zeros(3), np.zeros((1, 3)), np.zeros((1, 3)))
        assert ent2 - ent1 == pytest.approx(3 * math.log(2))

    def test_entropy_monte_carlo(self):
        rng = np.random.default_rng(0)
        log_std = np.array([-0.7, 0.2])
        mean = np.array([0.3, -1.0])
        x = mean + np.exp(log_std) * rng.standard_normal((1_000_000, 2))
        logp, ent = gaussian_logprob_and_entropy(log_std, mean, x)
        assert -logp.mean() == pytest.approx(ent, rel=0.01)


class TestCheckpoints:
    def test_round_trip_exact(self, tmp_path, rng):
        net = DenseNet((4, 8, 2), rng, out_activation="tanh")
        save_arrays(tmp_path / "n.json", net_arrays("enc", net), {"note": "x"})
        arrays, meta = load_arrays(tmp_path / "n.json")
        back = net_from_arrays("enc", arrays, (4, 8, 2), out_activation="tanh")
        assert meta == {"note": "x"}
        assert digest(back.params) == digest(net.params)
        assert not (tmp_path / "n.json.tmp").exists()

    def test_wrong_format(self, tmp_path):
        (tmp_path / "x.json").write_text('{"format": "other"}')
        with pytest.raises(ValueError):
            load_arrays(tmp_path / "x.json")

    def test_shape_check(self, rng):
        arrays = net_arrays("n", DenseNet((4, 2), rng))
        with pytest.raises(ValueError):
            net_from_arrays("n", arrays, (3, 2))

    def test_digest_sensitive(self):
        a = [np.zeros(3)]
        assert digest(a) != digest([np.array([0.0, 0.0, 1e-300])])
        assert digest(a) != digest([np.zeros((1, 3))])


def test_rel_error_helper():
    assert rel_error(1.0, 1.0) == 0.0
    assert rel_error(0.0, 0.0) == 0.0
