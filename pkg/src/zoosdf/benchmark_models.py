"""Frequentist comparison estimators: GLS-GMM, KNS-style ridge SDF, RP-PCA."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError, SingularityError
from .panel import ReturnPanel
from .pricing import PricingReport, cross_section_fit


def _sample_moments(returns: np.ndarray):
    t_len = returns.shape[0]
    mu = returns.mean(axis=0)
    dev = returns - mu
    sigma = dev.T @ dev / (t_len - 1)
    return mu, sigma


def gls_gmm(
    factors: np.ndarray,
    panel: ReturnPanel,
    include_intercept: bool = True,
) -> tuple[np.ndarray, PricingReport | None]:
    """GLS cross-sectional estimate of factor prices of risk at sample moments.

    lambda = (C' Sigma^-1 C)^-1 C' Sigma^-1 mu_R with C = [1, cov(R, F)].
    Returns the fit report when the cross-section is large enough (N >= 2).
    """
    factors = np.atleast_2d(np.asarray(factors, dtype=np.float64))
    if factors.shape[0] != panel.n_periods:
        if factors.T.shape[0] == panel.n_periods:
            factors = factors.T
        else:
            raise DimensionError(
                f"factors have shape {factors.shape}, panel has T={panel.n_periods}"
            )
    mu_r, sigma_r = _sample_moments(panel.returns)
    dev_r = panel.returns - mu_r
    dev_f = factors - factors.mean(axis=0)
    c_f = dev_r.T @ dev_f / (panel.n_periods - 1)
    c_mat = np.column_stack([np.ones(panel.n_assets), c_f]) if include_intercept else c_f

    sig_chol = np.linalg.cholesky(sigma_r)
    z_c = np.linalg.solve(sig_chol, c_mat)
    z_mu = np.linalg.solve(sig_chol, mu_r)
    gram = z_c.T @ z_c
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularityError("factor loadings are collinear", condition_number=float(cond))
    lam = np.linalg.solve(gram, z_c.T @ z_mu)

    report = None
    if panel.n_assets >= 2:
        predicted = c_mat @ lam
        report = cross_section_fit(predicted, mu_r, sigma_r, label="gls_gmm")
    return lam, report


def _pca_weights(sigma: np.ndarray, n_components: int):
    eigvals, eigvecs = np.linalg.eigh(sigma)
    order = np.argsort(eigvals)[::-1]
    return eigvals[order[:n_components]], eigvecs[:, order[:n_components]]


def _ridge_weights(returns: np.ndarray, shrinkage: float, n_components: int) -> np.ndarray:
    """Max-Sharpe SDF weights on the top principal components with ridge shrinkage."""
    mu, sigma = _sample_moments(returns)
    eigvals, eigvecs = _pca_weights(sigma, n_components)
    coef = (eigvecs.T @ mu) / (eigvals + shrinkage)
    return eigvecs @ coef


def _score_weights(weights: np.ndarray, returns: np.ndarray) -> float:
    mu, sigma = _sample_moments(returns)
    predicted = sigma @ weights  # -cov(M, R) for M = 1 - w'(R - mean)
    return cross_section_fit(predicted, mu, sigma, label="cv").r2_ols


def ridge_sdf_cv(
    panel: ReturnPanel,
    shrinkages: np.ndarray,
    component_counts: np.ndarray,
    split: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, tuple[float, int]]:
    """Two-fold cross-validated ridge-on-PCs SDF weights.

    Each grid point is fit on one fold and scored (cross-sectional OLS R^2 of
    implied vs realized premia) on the other, both directions averaged; the
    maximizer is refit on the full sample.  The default split is the first and
    second halves of the sample.
    """
    shrinkages = np.atleast_1d(np.asarray(shrinkages, dtype=np.float64))
    component_counts = np.atleast_1d(np.asarray(component_counts, dtype=np.intp))
    if shrinkages.size == 0 or component_counts.size == 0:
        raise ConfigError("empty cross-validation grid")
    if np.any(component_counts > panel.n_assets):
        raise ConfigError("component count exceeds the number of assets")
    t_len = panel.n_periods
    if split is None:
        half = t_len // 2
        split = (np.arange(half), np.arange(half, t_len))
    fold_a, fold_b = split
    r_a = panel.returns[fold_a]
    r_b = panel.returns[fold_b]

    best = None
    for eta in shrinkages:
        for n_comp in component_counts:
            score = 0.5 * (
                _score_weights(_ridge_weights(r_a, eta, int(n_comp)), r_b)
                + _score_weights(_ridge_weights(r_b, eta, int(n_comp)), r_a)
            )
            key = (score, eta, -int(n_comp))  # ties -> larger shrinkage, fewer comps
            if best is None or key > best[0]:
                best = (key, float(eta), int(n_comp))
    _, eta_star, n_star = best
    weights = _ridge_weights(panel.returns, eta_star, n_star)
    return weights, (eta_star, n_star)


def rp_pca(
    panel: ReturnPanel,
    n_components: int,
    gamma: float = 20.0,
    include_intercept: bool = False,
) -> tuple[np.ndarray, PricingReport | None]:
    """Risk-premia PCA: eigenvectors of the mean-weighted second-moment matrix.

    Latent factors are the asset returns projected on the top eigenvectors of
    (1/T) X'X + gamma * xbar xbar'; they are then priced via gls_gmm.
    """
    x = panel.returns
    t_len, n = x.shape
    if n_components > n:
        raise ConfigError(f"n_components={n_components} exceeds N={n}")
    xbar = x.mean(axis=0)
    second_moment = x.T @ x / t_len + gamma * np.outer(xbar, xbar)
    if n_components > np.linalg.matrix_rank(second_moment):
        raise SingularityError("n_components exceeds the rank of the moment matrix")
    _, eigvecs = _pca_weights(second_moment, n_components)
    latent = x @ eigvecs
    lam, report = gls_gmm(latent, panel, include_intercept=include_intercept)
    if report is not None:
        report = PricingReport(
            rmse=report.rmse, mape=report.mape, r2_ols=report.r2_ols,
            r2_gls=report.r2_gls, constrained_r2=report.constrained_r2,
            n_assets=report.n_assets, label="rp_pca",
        )
    return latent, report
