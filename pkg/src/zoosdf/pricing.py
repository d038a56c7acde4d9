"""Cross-sectional pricing diagnostics for any SDF or price-of-risk vector.

With standardized data the pricing errors are in Sharpe-ratio units.  The GLS
R^2 is the quadratic-form analogue of the OLS one, measured in the metric of
the inverse asset covariance matrix.  Values depend on this convention, so it
is spelled out here once:

    R2_OLS = 1 - sum(alpha^2) / sum((mu - mean(mu))^2)
    R2_GLS = 1 - (alpha' Sigma^-1 alpha) / (mu' Sigma^-1 mu)

The GLS denominator uses the raw realized premia: demeaning against the ones
vector is unit-dependent, and only the raw quadratic form is invariant to a
rescaling of test-asset units with Sigma rescaled consistently (mu' Sigma^-1 mu
is also the squared ex post maximum Sharpe ratio).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    InsufficientDataError,
    NumericalError,
    SchemaError,
)
from .panel import ReturnPanel


@dataclass(frozen=True)
class PricingReport:
    rmse: float
    mape: float
    r2_ols: float
    r2_gls: float
    constrained_r2: float
    n_assets: int
    label: str = ""

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "n_assets": self.n_assets,
            "rmse": self.rmse,
            "mape": self.mape,
            "r2_ols": self.r2_ols,
            "r2_gls": self.r2_gls,
            "constrained_r2": self.constrained_r2,
        }


def implied_premia(sdf_series: np.ndarray, asset_returns: np.ndarray) -> np.ndarray:
    """Model-implied premia: minus the sample covariance of the SDF with each asset."""
    m = np.asarray(sdf_series, dtype=np.float64)
    r = np.atleast_2d(np.asarray(asset_returns, dtype=np.float64))
    if r.shape[0] != m.shape[0]:
        if r.T.shape[0] == m.shape[0]:
            r = r.T
        else:
            raise DimensionError(
                f"SDF has T={m.shape[0]} but returns have shape {asset_returns.shape}"
            )
    t_len = m.shape[0]
    if t_len < 2:
        raise InsufficientDataError("need at least two periods for a covariance")
    dm = m - m.mean()
    dr = r - r.mean(axis=0)
    return -(dm @ dr) / (t_len - 1)


def rmse_mape(alpha: np.ndarray) -> tuple[float, float]:
    alpha = np.asarray(alpha, dtype=np.float64)
    return float(np.sqrt(np.mean(alpha**2))), float(np.mean(np.abs(alpha)))


def cross_section_fit(
    predicted: np.ndarray,
    realized: np.ndarray,
    sigma_r: np.ndarray,
    label: str = "",
) -> PricingReport:
    """Fit statistics of predicted vs realized premia over one cross-section."""
    predicted = np.asarray(predicted, dtype=np.float64)
    realized = np.asarray(realized, dtype=np.float64)
    n = realized.shape[0]
    if predicted.shape != realized.shape:
        raise DimensionError(f"predicted {predicted.shape} vs realized {realized.shape}")
    if n < 2:
        raise InsufficientDataError("need at least two assets")
    sigma_r = np.asarray(sigma_r, dtype=np.float64)
    if sigma_r.shape != (n, n):
        raise DimensionError(f"sigma_r must be {n}x{n}, got {sigma_r.shape}")

    alpha = realized - predicted
    rmse, mape = rmse_mape(alpha)

    demeaned = realized - realized.mean()
    tss = float(demeaned @ demeaned)
    scale = max(1.0, float(realized @ realized))
    if np.ptp(realized) == 0.0 or tss <= 1e-24 * scale:
        raise NumericalError("realized premia have zero cross-sectional dispersion; R^2 undefined")
    r2_ols = 1.0 - float(alpha @ alpha) / tss

    try:
        chol = np.linalg.cholesky(sigma_r)
    except np.linalg.LinAlgError:
        raise NumericalError("sigma_r is not positive definite") from None
    w_alpha = np.linalg.solve(chol, alpha)
    w_mu = np.linalg.solve(chol, realized)
    r2_gls = 1.0 - float(w_alpha @ w_alpha) / float(w_mu @ w_mu)

    ss_realized = float(realized @ realized)
    if ss_realized == 0.0:
        raise NumericalError("realized premia are identically zero; constrained R^2 undefined")
    constrained = 1.0 - float(alpha @ alpha) / ss_realized

    return PricingReport(
        rmse=rmse, mape=mape, r2_ols=r2_ols, r2_gls=r2_gls,
        constrained_r2=constrained, n_assets=n, label=label,
    )


def price_sdf(sdf_series: np.ndarray, panel: ReturnPanel, label: str = "") -> PricingReport:
    """Price a panel's assets with an SDF series estimated on the same window."""
    premia = implied_premia(sdf_series, panel.returns)
    realized = panel.returns.mean(axis=0)
    dev = panel.returns - realized
    sigma = dev.T @ dev / (panel.n_periods - 1)
    return cross_section_fit(premia, realized, sigma, label=label)


def oos_price(
    mprs: np.ndarray,
    factor_means_train: np.ndarray,
    oos_panel: ReturnPanel,
    gls_window: str = "oos",
    sigma_r_full: np.ndarray | None = None,
    factor_names: tuple[str, ...] | None = None,
    label: str = "oos",
) -> PricingReport:
    """Out-of-sample pricing with frozen weights and training factor means."""
    mprs = np.asarray(mprs, dtype=np.float64)
    if factor_names is not None and tuple(factor_names) != oos_panel.factor_names:
        missing = [n for n in factor_names if n not in oos_panel.factor_names]
        raise SchemaError(f"OOS panel lacks factor columns {missing}" if missing
                          else "OOS panel factor columns are ordered differently")
    if mprs.shape[0] != oos_panel.n_factors:
        raise SchemaError(
            f"{mprs.shape[0]} weights for {oos_panel.n_factors} OOS factor columns"
        )
    sdf = 1.0 - (oos_panel.factors - np.asarray(factor_means_train)) @ mprs
    premia = implied_premia(sdf, oos_panel.returns)
    realized = oos_panel.returns.mean(axis=0)
    if gls_window == "oos":
        dev = oos_panel.returns - realized
        sigma = dev.T @ dev / (oos_panel.n_periods - 1)
    elif gls_window == "full":
        if sigma_r_full is None:
            raise SchemaError("gls_window='full' requires sigma_r_full")
        sigma = np.asarray(sigma_r_full, dtype=np.float64)
    else:
        raise SchemaError(f"gls_window must be 'oos' or 'full', got {gls_window!r}")
    return cross_section_fit(premia, realized, sigma, label=label)
