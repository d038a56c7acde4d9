import numpy as np
import pytest

from zoosdf.benchmark_models import gls_gmm
from zoosdf.errors import CalibrationError, ConfigError
from zoosdf.panel import standardize
from zoosdf.simlab import (
    EXPERIMENT_MENUS,
    SimConfig,
    calibrate_from_reference,
    generate_sample,
    hml_like_config,
    run_experiment,
)


class TestGenerateSample:
    def test_near_perfect_proxy(self):
        cfg = hml_like_config(t_len=10_000, deltas=(1.0 - 1e-6,), include_true_factor=True)
        panel = generate_sample(cfg, np.random.default_rng(0))
        names = panel.factor_names
        f_true = panel.factors[:, names.index("f_true")]
        proxy = panel.factors[:, names.index("f_1")]
        assert np.corrcoef(f_true, proxy)[0, 1] > 0.999

    def test_zero_delta_proxy_is_useless(self):
        t_len = 10_000
        cfg = hml_like_config(t_len=t_len, deltas=(0.0,), include_true_factor=True)
        panel = generate_sample(cfg, np.random.default_rng(1))
        names = panel.factor_names
        corr = np.corrcoef(
            panel.factors[:, names.index("f_true")], panel.factors[:, names.index("f_1")]
        )[0, 1]
        assert abs(corr) < 3.0 / np.sqrt(t_len)

    def test_proxy_variance_is_one(self):
        cfg = hml_like_config(t_len=40_000, deltas=(0.4, 0.2))
        panel = generate_sample(cfg, np.random.default_rng(2))
        sds = panel.factors.std(axis=0, ddof=1)
        np.testing.assert_allclose(sds, 1.0, atol=0.02)

    def test_population_pricing_of_assets(self):
        cfg = hml_like_config(t_len=200_000, deltas=())
        panel = generate_sample(cfg, np.random.default_rng(3))
        mu_hat = panel.returns.mean(axis=0)
        np.testing.assert_allclose(
            mu_hat, cfg.loadings * cfg.lambda_true,
            atol=4 * np.sqrt(np.diag(cfg.sigma_r) / cfg.t_len).max(),
        )

    def test_sigma_r_must_dominate_loadings(self):
        with pytest.raises(ConfigError):
            SimConfig(lambda_true=0.1, loadings=np.ones(3), sigma_r=np.eye(3) * 0.5)


class TestCalibrateFromReference:
    def test_recovers_known_lambda_exactly(self):
        # reference panel engineered so mu_R = cov(R, f_std) * lam exactly
        rng = np.random.default_rng(4)
        t_len, n = 400, 6
        f = rng.standard_normal(t_len)
        loadings = np.linspace(-1.0, 1.2, n)
        rets = np.outer(f, loadings) + 0.5 * rng.standard_normal((t_len, n))
        lam_true = 0.3
        f_std = f / f.std(ddof=1)
        cov = ((rets - rets.mean(0)) * (f_std - f_std.mean())[:, None]).sum(0) / (t_len - 1)
        rets = rets - rets.mean(0) + cov * lam_true

        from test_benchmark_models import panel_from_arrays

        panel = panel_from_arrays(rets, f[:, None])
        out = calibrate_from_reference(panel, "F0")
        assert abs(out["lambda_true"] - lam_true) < 1e-8
        np.testing.assert_allclose(out["loadings"], cov, atol=1e-10)

    def test_degenerate_reference(self):
        from test_benchmark_models import panel_from_arrays

        rng = np.random.default_rng(5)
        rets = rng.standard_normal((100, 3))
        panel = panel_from_arrays(rets, np.full((100, 1), 0.2))
        with pytest.raises(CalibrationError):
            calibrate_from_reference(panel, "F0")

    def test_missing_factor_name(self):
        from test_benchmark_models import panel_from_arrays

        rng = np.random.default_rng(6)
        panel = panel_from_arrays(rng.standard_normal((100, 3)), rng.standard_normal((100, 1)))
        with pytest.raises(CalibrationError):
            calibrate_from_reference(panel, "nope")


class TestSelfMispricingLaw:
    @pytest.mark.slow
    def test_single_proxy_gls_lambda_is_lambda_over_delta(self):
        delta, lam_true = 0.5, 0.2
        cfg = hml_like_config(
            lambda_true=lam_true, t_len=50_000, deltas=(delta,),
            include_true_factor=False, include_useless=False,
        )
        panel = generate_sample(cfg, np.random.default_rng(7))
        lam, _ = gls_gmm(panel.factors, panel)
        assert abs(lam[1] - lam_true / delta) / (lam_true / delta) < 0.05

    @pytest.mark.slow
    def test_relative_mispricing_proportional_to_inverse_delta_squared(self):
        lam_true = 0.2
        deltas = (0.5, 0.4, 0.3, 0.25)
        xs, ys = [], []
        for delta in deltas:
            for seed in range(4):
                cfg = hml_like_config(
                    lambda_true=lam_true, t_len=20_000, deltas=(delta,),
                    include_true_factor=False, include_useless=False,
                )
                panel = generate_sample(cfg, np.random.default_rng(100 + seed))
                lam, _ = gls_gmm(panel.factors, panel)
                implied_self_premium = lam[1] * panel.factors[:, 0].var(ddof=1)
                true_premium = delta * lam_true
                ys.append(implied_self_premium / true_premium - 1.0)
                xs.append(1.0 / delta**2 - 1.0)
        xs, ys = np.asarray(xs), np.asarray(ys)
        design = np.column_stack([np.ones_like(xs), xs])
        coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
        resid = ys - design @ coef
        dof = xs.size - 2
        cov = resid @ resid / dof * np.linalg.inv(design.T @ design)
        se = np.sqrt(np.diag(cov))
        assert abs(coef[0]) < 2 * se[0]          # intercept ~ 0
        assert coef[1] > 5 * se[1]               # slope clearly nonzero (~1)
        assert abs(coef[1] - 1.0) < 0.2


class TestRunExperiment:
    def test_unknown_experiment(self):
        with pytest.raises(ConfigError):
            run_experiment("VII", hml_like_config())

    def test_menus_match_design(self):
        assert EXPERIMENT_MENUS["I"] == ("u_f", "f_true")
        assert EXPERIMENT_MENUS["VI"] == ("u_f", "f_1", "f_2", "f_3", "f_4")

    def test_deterministic_given_seed(self):
        cfg = hml_like_config(t_len=400, repetitions=2, seed=3, n_draws=300, burn_in=100)
        a = run_experiment("I", cfg)
        b = run_experiment("I", cfg)
        np.testing.assert_array_equal(a.total_mpr, b.total_mpr)
        np.testing.assert_array_equal(a.factor_probs, b.factor_probs)

    def test_summary_layout(self):
        cfg = hml_like_config(t_len=400, repetitions=3, seed=4, n_draws=300, burn_in=100)
        out = run_experiment("V", cfg)
        assert out.factor_names == ("u_f", "f_1", "f_2")
        assert out.factor_probs.shape == (3, 3)
        assert out.total_mpr.shape == (3,)
        d = out.as_dict()
        assert "summary" in d and "repetitions" in d

    @pytest.mark.slow
    def test_spread_concentrates_with_sample_size(self):
        # quadrupling T should roughly halve the cross-repetition spread
        reps = 16
        small = run_experiment("I", hml_like_config(
            t_len=400, repetitions=reps, seed=5, n_draws=1200, burn_in=300))
        big = run_experiment("I", hml_like_config(
            t_len=1600, repetitions=reps, seed=5, n_draws=1200, burn_in=300))
        ratio = small.total_mpr.std(ddof=1) / big.total_mpr.std(ddof=1)
        assert 1.2 < ratio < 3.5


class TestFailureResampling:
    def test_failed_repetition_resampled_and_counted(self, monkeypatch):
        import zoosdf.simlab as simlab
        from zoosdf.errors import NumericalError

        real_run_chain = simlab.run_chain
        failed = {"left": 2}

        def flaky(*args, **kwargs):
            if failed["left"] > 0:
                failed["left"] -= 1
                raise NumericalError("synthetic failure")
            return real_run_chain(*args, **kwargs)

        monkeypatch.setattr(simlab, "run_chain", flaky)
        cfg = hml_like_config(t_len=400, repetitions=2, seed=9, n_draws=200, burn_in=50)
        out = run_experiment("I", cfg)
        assert out.n_failures == 2
        assert out.total_mpr.shape == (2,)
