import numpy as np
import pytest

from zoosdf.benchmark_models import gls_gmm, ridge_sdf_cv, rp_pca
from zoosdf.errors import ConfigError, SingularityError
from zoosdf.panel import FactorMeta, ReturnPanel, standardize

from conftest import toy_panel


def panel_from_arrays(rets, facs, tradable=False, mapping=None):
    t_len = rets.shape[0]
    dates = tuple(f"{1900 + i // 12:04d}-{i % 12 + 1:02d}" for i in range(t_len))
    meta = tuple(
        FactorMeta(f"F{j}", tradable, "stock") for j in range(facs.shape[1])
    )
    return ReturnPanel(
        dates=dates, returns=rets, factors=facs, factor_meta=meta,
        asset_names=tuple(f"A{i}" for i in range(rets.shape[1])),
        factors_as_assets=mapping or {},
    )


class TestGlsGmm:
    def test_self_pricing_single_factor(self):
        rng = np.random.default_rng(0)
        f = 0.05 + rng.standard_normal(200)
        panel = panel_from_arrays(f[:, None], f[:, None], tradable=True, mapping={0: 0})
        lam, report = gls_gmm(panel.factors, panel, include_intercept=False)
        np.testing.assert_allclose(lam, [f.mean() / f.var(ddof=1)], atol=1e-12)
        assert report is None  # single-asset cross-section has no fit statistics

    def test_orthogonal_factor_is_singular(self):
        rng = np.random.default_rng(1)
        rets = rng.standard_normal((100, 3))
        raw = rng.standard_normal(100)
        dev = rets - rets.mean(axis=0)
        coef = np.linalg.lstsq(dev, raw - raw.mean(), rcond=None)[0]
        orthogonal = raw - dev @ coef  # zero sample covariance with every asset
        panel = panel_from_arrays(rets, orthogonal[:, None])
        with pytest.raises(SingularityError):
            gls_gmm(panel.factors, panel)

    def test_matches_two_step_closed_form(self):
        panel = toy_panel(seed=2, t_len=300, n_assets=6, n_factors=2)
        lam, report = gls_gmm(panel.factors, panel)
        mu = panel.returns.mean(axis=0)
        sigma = np.cov(panel.returns.T, ddof=1)
        c_f = np.array([
            [np.cov(panel.returns[:, i], panel.factors[:, j], ddof=1)[0, 1]
             for j in range(2)]
            for i in range(6)
        ])
        c_mat = np.column_stack([np.ones(6), c_f])
        sig_inv = np.linalg.inv(sigma)
        oracle = np.linalg.solve(c_mat.T @ sig_inv @ c_mat, c_mat.T @ sig_inv @ mu)
        np.testing.assert_allclose(lam, oracle, atol=1e-10)
        assert report is not None and report.n_assets == 6

    def test_exact_recovery_on_exact_pricing_toy(self):
        from test_gibbs import exact_pricing_panel

        panel = exact_pricing_panel(seed=3, lam_true=0.5)
        lam, _ = gls_gmm(panel.factors[:, :1], panel)
        np.testing.assert_allclose(lam, [0.0, 0.5], atol=1e-8)


class TestRidgeSdfCv:
    def test_degenerate_cv_reproduces_gls_weights(self):
        panel = toy_panel(seed=4, t_len=200, n_assets=5, n_factors=2)
        t_idx = np.arange(panel.n_periods)
        weights, (eta, n_comp) = ridge_sdf_cv(
            panel, shrinkages=[0.0], component_counts=[5], split=(t_idx, t_idx)
        )
        mu = panel.returns.mean(axis=0)
        sigma = np.cov(panel.returns.T, ddof=1)
        np.testing.assert_allclose(weights, np.linalg.solve(sigma, mu), atol=1e-8)
        assert (eta, n_comp) == (0.0, 5)

    def test_empty_grid_is_config_error(self):
        panel = toy_panel(seed=5)
        with pytest.raises(ConfigError):
            ridge_sdf_cv(panel, shrinkages=[], component_counts=[1])

    def test_pure_noise_panel_selects_heavy_shrinkage(self):
        rng = np.random.default_rng(6)
        rets = rng.standard_normal((240, 6)) * 0.05
        panel = panel_from_arrays(rets, rng.standard_normal((240, 1)))
        grid = np.array([1e-4, 1e-3, 1e-2, 1e-1, 1.0])
        _, (eta, _) = ridge_sdf_cv(panel, grid, [3])
        assert eta >= np.median(grid)

    @pytest.mark.slow
    def test_two_true_pcs_recovered(self):
        # With maximizer selection over a twofold CV score, an extra component
        # beyond the true two costs an expected score drop of the same order as
        # the score noise (ratio ~1/2 per component), which caps the recovery
        # rate near 77% regardless of T, N, or signal strength.  75% over the
        # fixed seed set is the honest bar; an implementation bug lands far
        # below it.
        picks = []
        n_seeds = 100
        for seed in range(n_seeds):
            rng = np.random.default_rng(1000 + seed)
            t_len, n = 2000, 25
            pcs = rng.standard_normal((t_len, 2))
            load = np.linalg.qr(rng.standard_normal((n, 2)))[0] * 2.0
            prem = load @ np.array([0.5, 0.35])
            rets = prem + pcs @ load.T + rng.standard_normal((t_len, n))
            panel = panel_from_arrays(rets, rng.standard_normal((t_len, 1)))
            _, (_, n_comp) = ridge_sdf_cv(panel, [1e-4], [1, 2, 3, 4])
            picks.append(n_comp)
        hits = sum(p in (2, 3) for p in picks)
        assert hits >= 0.75 * n_seeds
        counts = np.bincount(picks, minlength=5)
        assert counts.argmax() == 2


class TestRpPca:
    def test_gamma_zero_reduces_to_uncentered_pca(self):
        panel = toy_panel(seed=7, t_len=150, n_assets=5, n_factors=1)
        latent, _ = rp_pca(panel, n_components=2, gamma=0.0)
        x = panel.returns
        second = x.T @ x / x.shape[0]
        eigvals, eigvecs = np.linalg.eigh(second)
        top = eigvecs[:, np.argsort(eigvals)[::-1][:2]]
        oracle = x @ top
        for j in range(2):  # eigenvectors are sign-ambiguous
            err = min(
                np.abs(latent[:, j] - oracle[:, j]).max(),
                np.abs(latent[:, j] + oracle[:, j]).max(),
            )
            assert err < 1e-10

    def test_huge_gamma_aligns_first_eigenvector_with_means(self):
        rng = np.random.default_rng(8)
        rets = rng.standard_normal((300, 5)) * 0.02
        rets[:, 2] += 0.5  # one high-mean asset
        panel = panel_from_arrays(rets, rng.standard_normal((300, 1)))
        x = panel.returns
        xbar = x.mean(axis=0)
        second = x.T @ x / x.shape[0] + 1e6 * np.outer(xbar, xbar)
        eigvals, eigvecs = np.linalg.eigh(second)
        v1 = eigvecs[:, np.argmax(eigvals)]
        cosine = abs(v1 @ xbar) / np.linalg.norm(xbar)
        assert cosine > 0.99

    def test_full_rank_components_price_exactly(self):
        panel = toy_panel(seed=9, t_len=200, n_assets=4, n_factors=1)
        _, report = rp_pca(panel, n_components=4, gamma=20.0)
        np.testing.assert_allclose(report.r2_ols, 1.0, atol=1e-8)

    def test_too_many_components(self):
        panel = toy_panel(seed=10, t_len=150, n_assets=4, n_factors=1)
        with pytest.raises(ConfigError):
            rp_pca(panel, n_components=5)


class TestUselessFactorContrast:
    @pytest.mark.slow
    def test_gls_unstable_but_posterior_mpr_shrunk(self):
        # frequentist lambda for a useless factor swings across bootstrap
        # resamples (coefficient of variation > 1) while the spike-and-slab
        # posterior mean stays pinned near zero
        from test_gibbs import exact_pricing_panel
        from zoosdf.gibbs import run_chain
        from zoosdf.priors import PriorConfig

        panel = exact_pricing_panel(seed=21, t_len=600)
        rng = np.random.default_rng(0)
        lams = []
        for _ in range(40):
            rows = rng.integers(0, panel.n_periods, size=panel.n_periods)
            rows.sort()
            boot = ReturnPanel(
                dates=panel.dates, returns=panel.returns[rows],
                factors=panel.factors[rows], factor_meta=panel.factor_meta,
                asset_names=panel.asset_names,
            )
            lam, _ = gls_gmm(boot.factors, boot)
            lams.append(lam[2])  # useless-factor price of risk
        lams = np.asarray(lams)
        cv = lams.std(ddof=1) / max(abs(lams.mean()), 1e-12)
        assert cv > 1.0

        draws = run_chain(standardize(panel), PriorConfig(psi=20.0),
                          n_draws=3000, burn_in=800, seed=1)
        assert abs(draws.lambda_f[:, 1].mean()) < 0.05
