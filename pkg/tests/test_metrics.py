import math

import numpy as np
import pytest
from scipy.special import ndtri

from acrobench import acrobot, metrics, models
from acrobench.trace import Trace

from conftest import StubGaussianModel, constant_stub, random_trace, trace_from_arrays


@pytest.fixture(scope="module")
def raw_data():
    pool = random_trace(episodes=6, episode_len=120, seed=10)
    test = random_trace(episodes=6, episode_len=120, seed=11)
    return pool, test


@pytest.fixture(scope="module")
def arlin_setup(raw_data):
    pool, test = raw_data
    cond, targets = pool.pairs()
    model = models.make_model("arlin", seed=0).fit(cond, targets)
    baseline = models.BaselineGaussian().fit_targets(targets)
    return model, baseline, test


class TestAvgLogLikelihood:
    def test_baseline_self_consistency(self, raw_data):
        pool, _ = raw_data
        _, targets = pool.pairs()
        baseline = models.BaselineGaussian().fit_targets(targets)
        got = metrics.avg_log_likelihood(baseline, pool)
        per_dim = -0.5 * math.log(2 * math.pi) - np.log(baseline.sigma) - 0.5 * (
            ((targets - baseline.mu) / baseline.sigma) ** 2
        ).mean(axis=0)
        assert got == pytest.approx(per_dim.mean(), abs=1e-9)

    def test_hand_computed_three_step_trace(self):
        obs = np.array([
            [0.1, 0.0, 0.0, 0.0],
            [0.2, 0.1, 0.0, 0.0],
            [0.3, 0.2, 0.0, 0.0],
        ])
        tr = trace_from_arrays(obs, np.zeros(3))
        stub = constant_stub([0.25, 0.15, 0.0, 0.0], sigma=0.5)
        # two pairs; per-dim terms are N(y; mu, 0.5) evaluated by hand
        want = 0.0
        for y_row in obs[1:]:
            for j in range(4):
                mu = [0.25, 0.15, 0.0, 0.0][j]
                want += (
                    -0.5 * math.log(2 * math.pi) - math.log(0.5)
                    - 0.5 * ((y_row[j] - mu) / 0.5) ** 2
                )
        want /= 2 * 4
        assert metrics.avg_log_likelihood(stub, tr) == pytest.approx(want, abs=1e-12)

    def test_capability_error_for_deterministic(self, raw_data):
        pool, _ = raw_data
        oracle = models.TrueDynamics("raw")
        with pytest.raises(models.CapabilityError):
            metrics.avg_log_likelihood(oracle, pool)


class TestLrScore:
    def test_model_equals_baseline(self, raw_data):
        pool, _ = raw_data
        _, targets = pool.pairs()
        baseline = models.BaselineGaussian().fit_targets(targets)
        lr, or_rate = metrics.lr_score(baseline, pool, baseline)
        assert lr == pytest.approx(1.0, abs=1e-6)

    def test_injected_outlier_raises_or_by_one_step(self, arlin_setup):
        model, baseline, test = arlin_setup
        tr = test.select_episodes([0])
        cond, targets = tr.pairs()
        n_pairs = len(cond)
        # the final row is only ever a target, so spoiling it taints one pair
        assert model.log_density(cond[-1:], targets[-1:])[0] > math.log(metrics.P_MIN)
        _, or0 = metrics.lr_score(model, tr, baseline)
        spoiled = Trace(
            variant=tr.variant, episode=tr.episode, t=tr.t,
            obs=tr.obs.copy(), act=tr.act, rew=tr.rew,
        )
        spoiled.obs[-1] += 100.0  # absurd observable: density below any cutoff
        _, or1 = metrics.lr_score(model, spoiled, baseline)
        assert or1 - or0 == pytest.approx(1.0 / n_pairs, abs=1e-9)

    def test_all_filtered_reports_undefined(self, raw_data):
        pool, _ = raw_data
        _, targets = pool.pairs()
        baseline = models.BaselineGaussian().fit_targets(targets)
        lr, or_rate = metrics.lr_score(baseline, pool, baseline, p_min=1e300)
        assert math.isnan(lr) and or_rate == 1.0

    def test_or_monotone_in_p_min(self, arlin_setup):
        model, baseline, test = arlin_setup
        rates = [
            metrics.lr_score(model, test, baseline, p_min=p)[1]
            for p in (1e-12, 1.47e-6, 1e-3, 1e-1)
        ]
        assert all(a <= b + 1e-12 for a, b in zip(rates, rates[1:]))

    def test_per_dim_filter_mode(self, arlin_setup):
        model, baseline, test = arlin_setup
        lr_j, or_j = metrics.lr_score(model, test, baseline, filter_mode="joint")
        lr_d, or_d = metrics.lr_score(model, test, baseline, filter_mode="per_dim")
        assert 0 <= or_j <= 1 and 0 <= or_d <= 1
        with pytest.raises(ValueError):
            metrics.lr_score(model, test, baseline, filter_mode="bogus")

    def test_affine_rescaling_invariance(self, raw_data):
        # rescale all target dims by one affine map with the conditioning
        # fixed, refit model and baseline: the ratio normalization cancels
        # the unit change exactly (the fixed density cutoff is
        # unit-dependent, so compare unfiltered)
        pool, test = raw_data
        cond, targets = pool.pairs()
        cond_t, targets_t = test.pairs()
        model = models.make_model("arlin").fit(cond, targets)
        baseline = models.BaselineGaussian().fit_targets(targets)
        lr0, _ = metrics.lr_score_pairs(
            model, cond_t, targets_t, baseline, p_min=1e-300
        )
        model_s = models.make_model("arlin").fit(cond, 3.0 * targets + 0.7)
        baseline_s = models.BaselineGaussian().fit_targets(3.0 * targets + 0.7)
        lr1, _ = metrics.lr_score_pairs(
            model_s, cond_t, 3.0 * targets_t + 0.7, baseline_s, p_min=1e-300
        )
        assert lr1 == pytest.approx(lr0, rel=1e-6)


class TestR2:
    def test_perfect_predictor(self, raw_data):
        _, test = raw_data
        oracle = models.TrueDynamics("raw")
        r2, per = metrics.r2_score(oracle, test)
        assert r2 == pytest.approx(1.0, abs=1e-9)

    def test_constant_mean_predictor_near_zero(self, raw_data):
        _, test = raw_data
        _, targets = test.pairs()
        mean = targets.mean(axis=0)
        r2, _ = metrics.r2_score(lambda c: np.tile(mean, (len(c), 1)), test)
        assert abs(r2) < 0.05

    def test_hand_computed_four_point_trace(self):
        obs = np.array([
            [0.0, 0.0, 0.0, 0.0],
            [0.1, 0.0, 0.0, 0.0],
            [0.2, 0.0, 0.0, 0.0],
            [0.4, 0.0, 0.0, 0.0],
        ])
        tr = trace_from_arrays(obs, np.zeros(4))
        pred = np.array([[0.12, 0, 0, 0], [0.18, 0, 0, 0], [0.35, 0, 0, 0]])
        r2, per = metrics.r2_score(lambda c: pred, tr)
        mse = ((pred[:, 0] - obs[1:, 0]) ** 2).mean()
        var = obs[:, 0].var()
        assert per[0] == pytest.approx(1 - mse / var, abs=1e-12)
        # three dims have zero variance: excluded, flagged as nan
        assert np.isnan(per[1:]).all()
        assert r2 == pytest.approx(per[0])

    def test_per_dimension_affine_invariance(self, raw_data):
        # per-dim rescaled targets with fixed conditioning: the refit linear
        # predictor is the affine image of the original, so each per-dim
        # explained variance is unchanged
        pool, test = raw_data
        cond, targets = pool.pairs()
        cond_t, targets_t = test.pairs()
        scale = np.array([2.0, 0.5, 3.0, 1.5])
        shift = np.array([0.1, -0.2, 0.0, 1.0])

        def r2_pairs(model, c, y):
            pred = model.mean(c)
            return 1.0 - ((pred - y) ** 2).mean(axis=0) / y.var(axis=0)

        model = models.make_model("arlin").fit(cond, targets)
        model_s = models.make_model("arlin").fit(cond, targets * scale + shift)
        r2_0 = r2_pairs(model, cond_t, targets_t)
        r2_1 = r2_pairs(model_s, cond_t, targets_t * scale + shift)
        assert np.allclose(r2_0, r2_1, atol=1e-9)


class TestKs:
    def test_perfectly_uniform_quantiles(self):
        n = 200
        targets_q = (np.arange(n) + 1.0) / n
        assert metrics.ks_distance(targets_q) <= 1.0 / n

    def test_all_quantiles_half(self):
        assert metrics.ks_distance(np.full(100, 0.5)) == pytest.approx(0.5)

    def test_crafted_quantiles_through_model_cdf(self):
        # craft observations whose model quantiles are exactly uniform
        n = 41
        mu = np.zeros(4)
        stub = constant_stub(mu, sigma=1.0)
        grid = (np.arange(1, n) ) / n
        y = ndtri(grid)  # standard normal quantile function
        obs = np.zeros((n, 4))
        obs[1:, 0] = y
        obs[1:, 1] = y
        obs[1:, 2] = y
        obs[1:, 3] = y
        tr = trace_from_arrays(obs, np.zeros(n))
        ks, per = metrics.ks_score(stub, tr)
        assert ks <= 1.0 / (n - 1) + 1e-9

    def test_self_sampled_model_is_calibrated(self, arlin_setup):
        model, _, test = arlin_setup
        cond, _ = test.pairs()
        n = len(cond)
        crit = 1.63 / math.sqrt(n)
        ok = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            fake = model.sample(cond, rng)
            per_dim = []
            for j in range(4):
                q = model.cdf_marginal(j, fake[:, j], cond, fake[:, :j])
                per_dim.append(metrics.ks_distance(q))
            ok += max(per_dim) < crit
        assert ok >= 17  # 1% critical value should pass nearly always

    def test_capability_error(self, raw_data):
        _, test = raw_data
        with pytest.raises(models.CapabilityError):
            metrics.ks_score(models.TrueDynamics("raw"), test)


class TestLongHorizon:
    def test_oracle_reaches_r2_one(self, raw_data):
        _, test = raw_data
        res = metrics.long_horizon(
            models.TrueDynamics("raw"), test, horizon=10, positions=40,
            rng=np.random.default_rng(0),
        )
        assert res.r2 == pytest.approx(1.0, abs=1e-9)
        assert res.ks is None

    def test_horizon_one_matches_one_step_r2(self, arlin_setup):
        model, _, test = arlin_setup
        det = models.make_model("arlin")
        cond, targets = test.pairs()
        det.fit(cond, targets)
        # deterministic comparison via a mean-prediction wrapper
        res = metrics.long_horizon(
            det, test, horizon=1, n_traces=300, positions=200,
            rng=np.random.default_rng(1),
        )
        r2_full, _ = metrics.r2_score(det, test)
        assert res.r2 == pytest.approx(r2_full, abs=0.1)

    def test_explicit_ks_request_on_det_model_raises(self, raw_data):
        _, test = raw_data
        with pytest.raises(models.CapabilityError):
            metrics.long_horizon(
                models.TrueDynamics("raw"), test, metrics=("r2", "ks"),
                rng=np.random.default_rng(0),
            )

    def test_horizon_longer_than_episodes_rejected(self):
        tr = random_trace(episodes=1, episode_len=8, seed=0)
        with pytest.raises(ValueError):
            metrics.long_horizon(
                models.TrueDynamics("raw"), tr, horizon=20,
                rng=np.random.default_rng(0),
            )


class TestCrossValidate:
    def test_deterministic_factory_zero_ci(self, raw_data):
        pool, test = raw_data
        report = metrics.cross_validate(
            lambda seed: models.TrueDynamics("raw"), pool, test, k=3, seed=0,
            positions=30, n_traces=10, model_kind="oracle", dataset="random",
        )
        assert report.ci90["r2"] == pytest.approx(0.0, abs=1e-12)
        assert report.mean["lr"] is None  # capability blank
        assert report.mean["ks"] is None

    def test_fold_replay_matches_manual_run(self, raw_data):
        pool, test = raw_data
        report = metrics.cross_validate(
            lambda seed: models.make_model("arlin", seed=seed), pool, test, k=2,
            seed=7, positions=25, n_traces=20, model_kind="arlin", dataset="random",
        )
        groups = metrics._fold_episode_groups(pool, 2)
        fold_seeds = [
            int(s.generate_state(1)[0]) for s in np.random.SeedSequence(7).spawn(2)
        ]
        manual = metrics._run_fold(
            (lambda seed: models.make_model("arlin", seed=seed), pool, test, groups,
             0, fold_seeds[0], 10, 20, 25, metrics.P_MIN, "joint")
        )
        assert report.folds[0].r2 == pytest.approx(manual.r2, abs=1e-12)
        assert report.folds[0].lr == pytest.approx(manual.lr, rel=1e-9)

    def test_report_schema_and_roundtrip(self, raw_data):
        pool, test = raw_data
        report = metrics.cross_validate(
            lambda seed: models.make_model("arlin", seed=seed), pool, test, k=2,
            seed=0, positions=20, n_traces=10, model_kind="arlin", dataset="random",
        )
        for name in metrics.METRIC_NAMES:
            assert name in report.mean
            assert report.mean[name] is not None
        for fold in report.folds:
            assert fold.per_dim["r2"] is not None and len(fold.per_dim["r2"]) == 4
        back = metrics.MetricReport.from_json(report.to_json())
        for name in metrics.METRIC_NAMES:
            assert back.mean[name] == pytest.approx(report.mean[name], rel=1e-12)
        rows = report.csv_rows()
        assert all(r.count(",") == 6 for r in rows)

    def test_too_few_episodes_rejected(self):
        tr = random_trace(episodes=2, episode_len=30, seed=0)
        with pytest.raises(ValueError):
            metrics.cross_validate(
                lambda seed: models.make_model("arlin"), tr, tr, k=3
            )

    def test_parallel_folds_match_serial(self, raw_data):
        from functools import partial

        pool, test = raw_data
        factory = partial(models.make_model, "arlin")
        serial = metrics.cross_validate(
            factory, pool, test, k=2, seed=3, positions=15, n_traces=10,
            model_kind="arlin",
        )
        parallel = metrics.cross_validate(
            factory, pool, test, k=2, seed=3, positions=15, n_traces=10,
            threads=2, model_kind="arlin",
        )
        for name in metrics.METRIC_NAMES:
            assert serial.mean[name] == pytest.approx(parallel.mean[name], rel=1e-12)
