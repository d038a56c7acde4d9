"""Time-series layer: Normal-inverse-Wishart posterior over (mu_Y, Sigma_Y).

One posterior draw of the stacked moments feeds the cross-sectional layer as
(mu_R, Sigma_R, C, rho).  Sampling uses a Bartlett factor of the Wishart with a
precomputed Cholesky-type square root of the inverse scatter matrix, so each
draw costs O(p^3) with small constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, get_lapack_funcs, solve_triangular

from .errors import DataError, SingularityError
from .panel import ReturnPanel


@dataclass(frozen=True)
class TimeSeriesDraw:
    """One posterior draw of the stacked mean vector and covariance matrix."""

    mu_y: np.ndarray
    sigma_y: np.ndarray

    def validate(self, tol: float = 1e-10):
        if not np.allclose(self.sigma_y, self.sigma_y.T, atol=tol, rtol=0.0):
            raise DataError("sigma_y is not symmetric")
        if np.linalg.eigvalsh(self.sigma_y)[0] <= 0.0:
            raise DataError("sigma_y is not positive definite")


@dataclass(frozen=True)
class CrossSectionInputs:
    """Inputs of the cross-sectional regression implied by one (mu_Y, Sigma_Y)."""

    mu_r: np.ndarray       # N
    sigma_r: np.ndarray    # N x N
    c_mat: np.ndarray      # N x (K+1) with leading ones column, or N x K
    rho: np.ndarray        # N x K asset-factor correlations
    factor_cov: np.ndarray  # K x K factor covariance block
    include_intercept: bool

    @property
    def n_assets(self) -> int:
        return self.mu_r.shape[0]

    @property
    def n_factors(self) -> int:
        return self.rho.shape[1]


class TimeSeriesSampler:
    """Draws (mu_Y, Sigma_Y) from the NIW posterior of a panel.

    Stateless across draws: all randomness comes from the generator handed to
    :meth:`draw`, so one instance can serve any number of chains.
    """

    def __init__(self, panel: ReturnPanel):
        y = panel.stacked()
        t_len, p = y.shape
        if t_len < p + 3:
            raise DataError(f"need T >= p + 3 for a proper posterior, got T={t_len}, p={p}")
        self.t_len = t_len
        self.p = p
        self.mu_hat = y.mean(axis=0)
        dev = y - self.mu_hat
        scatter = dev.T @ dev
        self.scatter = scatter
        try:
            c, low = cho_factor(scatter, lower=True)
        except np.linalg.LinAlgError:
            raise SingularityError(
                "scatter matrix is singular (duplicated or collinear column?)",
                condition_number=float(np.linalg.cond(scatter)),
            ) from None
        scatter_inv = cho_solve((c, low), np.eye(p))
        scatter_inv = (scatter_inv + scatter_inv.T) / 2.0
        try:
            self._root_inv = np.linalg.cholesky(scatter_inv)
        except np.linalg.LinAlgError:
            raise SingularityError(
                "scatter matrix is numerically singular",
                condition_number=float(np.linalg.cond(scatter)),
            ) from None
        self.dof = t_len - 1
        self._tril = np.tril_indices(p, -1)
        self._chi_dof = self.dof - np.arange(p)
        self._trtri, = get_lapack_funcs(("trtri",), (self._root_inv,))

    def draw(self, rng: np.random.Generator) -> TimeSeriesDraw:
        p = self.p
        bart = np.zeros((p, p))
        bart[self._tril] = rng.standard_normal(self._tril[0].shape[0])
        np.fill_diagonal(bart, np.sqrt(rng.chisquare(self._chi_dof)))
        # Wishart(dof, scatter^-1) draw has factor root_inv @ bart; its inverse
        # is the inverse-Wishart(dof, scatter) draw of Sigma_Y.
        phi = self._root_inv @ bart
        phi_inv, info = self._trtri(phi, lower=1)
        if info != 0:
            raise SingularityError("Bartlett factor inversion failed")
        sigma_y = phi_inv.T @ phi_inv
        sigma_y = (sigma_y + sigma_y.T) / 2.0
        mu_y = self.mu_hat + (phi_inv.T @ rng.standard_normal(p)) / np.sqrt(self.t_len)
        return TimeSeriesDraw(mu_y=mu_y, sigma_y=sigma_y)

    def point_estimate(self) -> TimeSeriesDraw:
        """Plug-in draw at the sample moments (diagnostic ts_mode='fixed')."""
        sigma = self.scatter / (self.t_len - 1)
        return TimeSeriesDraw(mu_y=self.mu_hat.copy(), sigma_y=sigma)


def sample_ts_params(panel: ReturnPanel, rng: np.random.Generator) -> TimeSeriesDraw:
    """One draw of (mu_Y, Sigma_Y) from the Normal-inverse-Wishart posterior."""
    return TimeSeriesSampler(panel).draw(rng)


def extract_cross_section(
    draw: TimeSeriesDraw, panel: ReturnPanel, include_intercept: bool = True
) -> CrossSectionInputs:
    """Slice (mu_R, Sigma_R, C, rho) for the cross-sectional layer out of a draw."""
    n = panel.n_assets
    y_idx = panel.factor_y_indices()
    mu_r = draw.mu_y[:n]
    sigma_r = draw.sigma_y[:n, :n]
    c_f = draw.sigma_y[:n, :][:, y_idx]
    sd_assets = np.sqrt(np.diag(draw.sigma_y)[:n])
    sd_factors = np.sqrt(np.diag(draw.sigma_y)[y_idx])
    rho = np.clip(c_f / np.outer(sd_assets, sd_factors), -1.0, 1.0)
    factor_cov = draw.sigma_y[np.ix_(y_idx, y_idx)]
    if include_intercept:
        c_mat = np.column_stack([np.ones(n), c_f])
    else:
        c_mat = c_f
    return CrossSectionInputs(
        mu_r=mu_r,
        sigma_r=sigma_r,
        c_mat=c_mat,
        rho=rho,
        factor_cov=factor_cov,
        include_intercept=include_intercept,
    )


def sample_moments_cross_section(panel: ReturnPanel, include_intercept: bool = True) -> CrossSectionInputs:
    """Cross-section inputs at the sample moments (no posterior uncertainty)."""
    sampler_free = panel.stacked()
    t_len = sampler_free.shape[0]
    mu = sampler_free.mean(axis=0)
    dev = sampler_free - mu
    sigma = dev.T @ dev / (t_len - 1)
    return extract_cross_section(TimeSeriesDraw(mu_y=mu, sigma_y=sigma), panel, include_intercept)
