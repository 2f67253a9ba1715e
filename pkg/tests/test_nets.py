import math

import numpy as np
import pytest

from acrobench import nets


def flat_loss(spec, loss_fn, x, y):
    def f(vec):
        params = nets.MlpParams.from_flat(spec, vec)
        return loss_fn(nets.forward(spec, params, x), y)[0]

    return f


def central_diff(f, vec, h=1e-5):
    out = np.empty_like(vec)
    for i in range(len(vec)):
        up = vec.copy()
        up[i] += h
        dn = vec.copy()
        dn[i] -= h
        out[i] = (f(up) - f(dn)) / (2 * h)
    return out


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    assert np.all(err <= np.maximum(atol, rtol * scale)), (
        f"max violation {np.max(err - np.maximum(atol, rtol * scale)):.3g}"
    )


class TestForward:
    def test_zero_params_zero_output(self, rng):
        spec = nets.MlpSpec(3, (4,), 2)
        params = nets.MlpParams.init(spec, rng)
        for w in params.weights:
            w[...] = 0.0
        for b in params.biases:
            b[...] = 0.0
        assert np.all(nets.forward(spec, params, rng.normal(size=(5, 3))) == 0.0)

    def test_single_linear_identity_layer(self):
        spec = nets.MlpSpec(3, (), 3)
        params = nets.MlpParams([np.eye(3)], [np.zeros(3)])
        x = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(nets.forward(spec, params, x), x)

    def test_matches_straight_line_arithmetic(self, rng):
        # independent re-implementation of the same arithmetic
        spec = nets.MlpSpec(4, (5, 3), 2, activation="tanh")
        params = nets.MlpParams.init(spec, rng)
        x = rng.normal(size=4)
        h1 = np.tanh(x @ params.weights[0] + params.biases[0])
        h2 = np.tanh(h1 @ params.weights[1] + params.biases[1])
        want = h2 @ params.weights[2] + params.biases[2]
        assert np.allclose(nets.forward(spec, params, x), want, rtol=1e-12)

    def test_dim_mismatch_raises(self, rng):
        spec = nets.MlpSpec(4, (5,), 2)
        params = nets.MlpParams.init(spec, rng)
        with pytest.raises(ValueError):
            nets.forward(spec, params, np.zeros((3, 5)))


class TestBackward:
    def test_zero_upstream_zero_grad(self, rng):
        spec = nets.MlpSpec(3, (4,), 2)
        params = nets.MlpParams.init(spec, rng)
        g = nets.backward(spec, params, rng.normal(size=(6, 3)), np.zeros((6, 2)))
        assert np.all(g.flatten() == 0.0)

    def test_single_linear_layer_gradient(self, rng):
        spec = nets.MlpSpec(3, (), 2)
        params = nets.MlpParams.init(spec, rng)
        x = rng.normal(size=(1, 3))
        up = rng.normal(size=(1, 2))
        g = nets.backward(spec, params, x, up)
        assert np.allclose(g.weights[0], np.outer(x[0], up[0]))
        assert np.allclose(g.biases[0], up[0])

    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    def test_matches_finite_differences(self, rng, activation):
        spec = nets.MlpSpec(4, (6, 5), 3, activation=activation)
        params = nets.MlpParams.init(spec, rng)
        x = rng.normal(size=(7, 4))
        y = rng.normal(size=(7, 3))
        out = nets.forward(spec, params, x)
        loss, dout = nets.mse_loss(out, y)
        analytic = nets.backward(spec, params, x, dout).flatten()
        numeric = central_diff(flat_loss(spec, nets.mse_loss, x, y), params.flatten())
        assert_grad_close(analytic, numeric)


class TestLosses:
    def test_mixture_nll_standard_normal_at_mode(self):
        # one component, weight 1, mu == y, sigma == 1
        raw_sigma = np.log(np.expm1(1.0 - nets.SIGMA_FLOOR))  # softplus inverse
        out = np.array([[3.0, 0.7, raw_sigma]])
        loss, _ = nets.mixture_nll(out, np.array([0.7]), 1)
        assert loss == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-9)

    def test_mixture_collapse_two_identical_components(self):
        raw_sigma = np.log(np.expm1(0.5))
        one = np.array([[0.0, 1.3, raw_sigma]])
        two = np.array([[2.0, 2.0, 1.3, 1.3, raw_sigma, raw_sigma]])
        l1, _ = nets.mixture_nll(one, np.array([0.9]), 1)
        l2, _ = nets.mixture_nll(two, np.array([0.9]), 2)
        assert l1 == pytest.approx(l2, abs=1e-12)

    def test_mixture_component_permutation_invariance(self, rng):
        out = rng.normal(size=(5, 9))
        y = rng.normal(size=5)
        perm = [2, 0, 1]
        permuted = np.concatenate(
            [out[:, :3][:, perm], out[:, 3:6][:, perm], out[:, 6:][:, perm]], axis=1
        )
        l1, _ = nets.mixture_nll(out, y, 3)
        l2, _ = nets.mixture_nll(permuted, y, 3)
        assert l1 == pytest.approx(l2, abs=1e-12)

    def test_mixture_weights_normalized_and_sigma_floored(self, rng):
        out = rng.normal(size=(20, 12)) * 5
        w, mu, sigma = nets.mixture_params_from_raw(out, 4, 1)
        assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(sigma >= nets.SIGMA_FLOOR)

    @pytest.mark.parametrize("d", [1, 4])
    def test_mixture_gradient_matches_finite_differences(self, rng, d):
        n_comp = 3
        spec = nets.MlpSpec(5, (8, 7), n_comp * (1 + 2 * d))
        params = nets.MlpParams.init(spec, rng)
        x = rng.normal(size=(6, 5))
        y = rng.normal(size=(6, d)) if d > 1 else rng.normal(size=6)
        loss_fn = nets.make_mixture_loss(n_comp)
        out = nets.forward(spec, params, x)
        _, dout = loss_fn(out, y)
        analytic = nets.backward(spec, params, x, dout).flatten()
        numeric = central_diff(flat_loss(spec, loss_fn, x, y), params.flatten())
        assert_grad_close(analytic, numeric)

    def test_gaussian_nll_gradient_matches_finite_differences(self, rng):
        spec = nets.MlpSpec(3, (6,), 2)
        params = nets.MlpParams.init(spec, rng)
        x = rng.normal(size=(5, 3))
        y = rng.normal(size=(5, 2))
        out = nets.forward(spec, params, x)
        _, dout = nets.gaussian_nll_loss(out, y)
        analytic = nets.backward(spec, params, x, dout).flatten()
        numeric = central_diff(
            flat_loss(spec, nets.gaussian_nll_loss, x, y), params.flatten()
        )
        assert_grad_close(analytic, numeric)

    def test_raw_output_width_validated(self):
        with pytest.raises(ValueError):
            nets.mixture_nll(np.zeros((2, 7)), np.zeros(2), 2)


class TestTrain:
    def test_linear_regression_converges(self, rng):
        x = rng.uniform(-1, 1, size=(400, 1))
        y = 2.0 * x
        spec = nets.MlpSpec(1, (32,), 1)
        params, report = nets.train(
            spec, x, y, nets.mse_loss, nets.TrainConfig(1e-2, 500, seed=3)
        )
        assert min(report.val_loss) < 1e-4
        assert not report.diverged

    def test_constant_target_learns_sample_sigma(self, rng):
        y = rng.normal(0.7, 0.35, size=600)
        x = rng.normal(size=(600, 2))
        spec = nets.MlpSpec(2, (16,), 3)
        params, _ = nets.train(
            spec, x, y, nets.make_mixture_loss(1), nets.TrainConfig(5e-3, 300, seed=4)
        )
        _, _, sigma = nets.mixture_params_from_raw(
            nets.forward(spec, params, x), 1, 1
        )
        assert sigma.mean() == pytest.approx(y.std(), rel=0.1)

    def test_training_is_deterministic(self, rng):
        x = rng.normal(size=(200, 3))
        y = rng.normal(size=(200, 2))
        spec = nets.MlpSpec(3, (8,), 2)
        cfg = nets.TrainConfig(1e-3, 20, seed=11)
        p1, r1 = nets.train(spec, x, y, nets.mse_loss, cfg)
        p2, r2 = nets.train(spec, x, y, nets.mse_loss, cfg)
        assert np.array_equal(p1.flatten(), p2.flatten())
        assert r1.train_loss == r2.train_loss
        assert r1.val_loss == r2.val_loss

    def test_divergence_keeps_last_finite_snapshot(self, rng):
        x = rng.normal(size=(100, 2))
        y = rng.normal(size=(100, 2))
        spec = nets.MlpSpec(2, (8, 8), 2)
        cfg = nets.TrainConfig(1e200, 50, seed=0)
        params, report = nets.train(spec, x, y, nets.mse_loss, cfg)
        assert report.diverged
        assert "non-finite" in report.notes
        assert np.all(np.isfinite(params.flatten()))

    def test_too_small_dataset_rejected(self, rng):
        spec = nets.MlpSpec(2, (4,), 1)
        with pytest.raises(ValueError):
            nets.train(
                spec, np.zeros((5, 2)), np.zeros(5), nets.mse_loss,
                nets.TrainConfig(1e-3, 1),
            )

    def test_validation_split_deterministic_and_disjoint(self):
        tr1, va1 = nets.validation_split(100, 0.1, seed=5)
        tr2, va2 = nets.validation_split(100, 0.1, seed=5)
        assert np.array_equal(tr1, tr2) and np.array_equal(va1, va2)
        assert len(va1) == 10
        assert len(np.intersect1d(tr1, va1)) == 0
        assert len(tr1) + len(va1) == 100


class TestParams:
    def test_flatten_roundtrip(self, rng):
        spec = nets.MlpSpec(4, (6, 5), 3)
        params = nets.MlpParams.init(spec, rng)
        back = nets.MlpParams.from_flat(spec, params.flatten())
        for a, b in zip(params.weights + params.biases, back.weights + back.biases):
            assert np.array_equal(a, b)

    def test_bad_spec_rejected(self):
        with pytest.raises(ValueError):
            nets.MlpSpec(0, (4,), 2)
        with pytest.raises(ValueError):
            nets.MlpSpec(2, (4,), 2, activation="gelu")
