"""Conditional mean and volatility of the SDF, plus predictive regressions.

ARMA fitting uses conditional-sum-of-squares likelihood (zero pre-sample
values), GARCH(1,1) a Gaussian QMLE with sandwich standard errors.  Both
objective recursions run through the kernels backend (numba or numpy).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import chi2, f as f_dist

from .errors import (
    ConfigError,
    DataError,
    DegenerateColumnError,
    DegenerateFitError,
    InsufficientDataError,
    SingularityError,
)
from .kernels import arma_css_residuals, garch11_filter, garch11_simulate

_ROOT_TOL = 1e-6
NEAR_INTEGRATED = 0.999


# ---------------------------------------------------------------------------
# ARMA by conditional sum of squares
# ---------------------------------------------------------------------------

@dataclass
class ArmaFit:
    order: tuple[int, int]
    mu: float
    phi: np.ndarray
    theta: np.ndarray
    residuals: np.ndarray
    fitted_mean: np.ndarray
    sigma2: float
    loglik: float
    aic: float
    bic: float


def _poly_roots_outside(coefs: np.ndarray) -> bool:
    """True when all roots of 1 - c_1 z - ... (or 1 + c_1 z + ...) lie outside the unit circle."""
    if coefs.size == 0:
        return True
    poly = np.concatenate(([1.0], coefs))
    roots = np.roots(poly[::-1])
    return bool(np.all(np.abs(roots) > 1.0 + _ROOT_TOL))


def _css(series: np.ndarray, mu: float, phi: np.ndarray, theta: np.ndarray) -> float:
    e = arma_css_residuals(series - mu, phi, theta)
    return float(e @ e)


def _arma_loglik(ss: float, t_len: int) -> float:
    sigma2 = ss / t_len
    return -0.5 * t_len * (math.log(2.0 * math.pi * sigma2) + 1.0)


def _fit_one_order(series: np.ndarray, p: int, q: int) -> tuple[float, np.ndarray] | None:
    """CSS-optimal parameters for one (p, q); None when the fit is inadmissible."""
    t_len = series.shape[0]
    mu0 = float(series.mean())
    if p == 0 and q == 0:
        return _css(series, mu0, np.empty(0), np.empty(0)), np.array([mu0])

    dev = series - mu0
    phi0 = np.zeros(p)
    if p > 0:
        x = np.column_stack([dev[p - i - 1 : t_len - i - 1] for i in range(p)])
        y = dev[p:]
        phi0 = np.linalg.lstsq(x, y, rcond=None)[0]
        if not _poly_roots_outside(phi0):
            phi0 = phi0 * 0.5
    x0 = np.concatenate(([mu0], phi0, np.zeros(q)))

    def objective(params):
        phi = params[1 : 1 + p]
        theta = params[1 + p :]
        if not _poly_roots_outside(phi) or not _poly_roots_outside(-theta):
            return 1e12
        return _css(series, params[0], phi, theta)

    best = None
    for scale in (1.0, 0.5):
        start = x0.copy()
        start[1:] *= scale
        res = minimize(objective, start, method="Nelder-Mead",
                       options={"maxiter": 4000, "xatol": 1e-8, "fatol": 1e-10})
        if best is None or res.fun < best.fun:
            best = res
    params = best.x
    phi = params[1 : 1 + p]
    theta = params[1 + p :]
    # reject candidates whose fitted roots are explosive or non-invertible
    if not _poly_roots_outside(phi) or not _poly_roots_outside(-theta):
        return None
    return float(best.fun), params


def fit_arma(series: np.ndarray, max_p: int, max_q: int, criterion: str = "BIC") -> ArmaFit:
    """Select and fit the criterion-minimizing ARMA order up to (max_p, max_q)."""
    if criterion not in ("AIC", "BIC"):
        raise ConfigError(f"criterion must be AIC or BIC, got {criterion!r}")
    series = np.asarray(series, dtype=np.float64)
    t_len = series.shape[0]
    if t_len <= 10 * (max_p + max_q):
        raise InsufficientDataError(
            f"need T > 10 (max_p + max_q) = {10 * (max_p + max_q)}, got T={t_len}"
        )
    if np.ptp(series) == 0.0 or series.std(ddof=1) <= 1e-12 * max(1.0, abs(series.mean())):
        raise DegenerateFitError("series is (numerically) constant")

    best = None
    for p in range(max_p + 1):
        for q in range(max_q + 1):
            fit = _fit_one_order(series, p, q)
            if fit is None:
                continue
            ss, params = fit
            loglik = _arma_loglik(ss, t_len)
            k = p + q + 2  # mu and sigma2
            crit = 2 * k - 2 * loglik if criterion == "AIC" else k * math.log(t_len) - 2 * loglik
            if best is None or crit < best[0]:
                best = (crit, p, q, ss, params, loglik)
    if best is None:
        raise DegenerateFitError("all candidate ARMA orders were rejected")

    _, p, q, ss, params, loglik = best
    mu = float(params[0])
    phi = params[1 : 1 + p]
    theta = params[1 + p :]
    residuals = arma_css_residuals(series - mu, phi, theta)
    k = p + q + 2
    return ArmaFit(
        order=(p, q),
        mu=mu,
        phi=phi,
        theta=theta,
        residuals=residuals,
        fitted_mean=series - residuals,
        sigma2=ss / t_len,
        loglik=loglik,
        aic=2 * k - 2 * loglik,
        bic=k * math.log(t_len) - 2 * loglik,
    )


def simulate_arma(mu, phi, theta, sigma, t_len, rng, burn=200):
    """ARMA(p,q) path with Gaussian innovations (for calibration checks)."""
    from scipy.signal import lfilter

    eps = rng.standard_normal(t_len + burn) * sigma
    num = np.concatenate(([1.0], np.asarray(theta, dtype=np.float64)))
    den = np.concatenate(([1.0], -np.asarray(phi, dtype=np.float64)))
    x = lfilter(num, den, eps)
    return mu + x[burn:]


# ---------------------------------------------------------------------------
# GARCH(1,1) quasi-maximum likelihood
# ---------------------------------------------------------------------------

@dataclass
class GarchFit:
    omega: float
    alpha: float
    beta: float
    conditional_variance: np.ndarray
    loglik: float
    robust_se: np.ndarray
    near_integrated: bool


def _garch_loglik_terms(params: np.ndarray, eps: np.ndarray) -> np.ndarray:
    omega, alpha, beta = params
    sigma2 = garch11_filter(eps, omega, alpha, beta)
    return -0.5 * (math.log(2.0 * math.pi) + np.log(sigma2) + eps**2 / sigma2)


def _garch_feasible(params: np.ndarray) -> bool:
    omega, alpha, beta = params
    return (
        omega > 1e-12
        and alpha >= 0.0
        and beta >= 0.0
        and alpha + beta <= 1.0 - 1e-8
    )


_GARCH_STARTS = ((0.05, 0.90), (0.10, 0.80), (0.20, 0.70), (0.05, 0.50), (0.30, 0.40))


def fit_garch11(residuals: np.ndarray) -> GarchFit:
    """Gaussian QMLE of a GARCH(1,1) with covariance-stationarity enforced.

    Derivative-free simplex from five deterministic (alpha, beta) starts with
    variance-targeted omega; standard errors are the robust sandwich from
    numerically differentiated per-observation scores.
    """
    eps = np.asarray(residuals, dtype=np.float64)
    t_len = eps.shape[0]
    if t_len < 100:
        raise InsufficientDataError(f"need T >= 100 residuals, got {t_len}")
    var = float(eps.var())
    if np.ptp(eps) == 0.0 or var <= 1e-14 * max(1.0, eps.mean() ** 2):
        raise DegenerateFitError("residuals are (numerically) constant")

    def neg_loglik(params):
        if not _garch_feasible(params):
            return 1e12
        return -float(_garch_loglik_terms(params, eps).sum())

    best = None
    for alpha0, beta0 in _GARCH_STARTS:
        start = np.array([var * (1.0 - alpha0 - beta0), alpha0, beta0])
        res = minimize(neg_loglik, start, method="Nelder-Mead",
                       options={"maxiter": 4000, "xatol": 1e-10, "fatol": 1e-10})
        if best is None or res.fun < best.fun:
            best = res
    # one restart from the incumbent guards against collapsed simplices on
    # the alpha ~ 0 ridge, where beta is unidentified
    res = minimize(neg_loglik, best.x, method="Nelder-Mead",
                   options={"maxiter": 4000, "xatol": 1e-10, "fatol": 1e-10})
    if res.fun < best.fun:
        best = res
    params = best.x
    loglik = -float(best.fun)

    mean_sq = float(np.mean(eps**2))
    constant_params = np.array([mean_sq, 0.0, 0.0])
    constant_ll = float(_garch_loglik_terms(constant_params, eps).sum())
    if loglik <= constant_ll + 1e-9:
        # no volatility clustering detected; report the nested constant fit
        params = constant_params
        loglik = constant_ll
    if loglik < constant_ll - 1e-6:
        raise DegenerateFitError("QMLE failed to improve over a constant-variance fit")

    omega, alpha, beta = params
    near = alpha + beta >= NEAR_INTEGRATED
    if near:
        warnings.warn(
            f"GARCH persistence alpha+beta={alpha + beta:.5f} is near the "
            "integrated boundary", RuntimeWarning, stacklevel=2,
        )
    return GarchFit(
        omega=float(omega),
        alpha=float(alpha),
        beta=float(beta),
        conditional_variance=garch11_filter(eps, omega, alpha, beta),
        loglik=loglik,
        robust_se=_garch_sandwich_se(params, eps),
        near_integrated=bool(near),
    )


def _garch_sandwich_se(params: np.ndarray, eps: np.ndarray) -> np.ndarray:
    t_len = eps.shape[0]
    steps = np.maximum(1e-6, 1e-4 * np.abs(params))

    def terms(p):
        return _garch_loglik_terms(p, eps)

    scores = np.empty((t_len, 3))
    for i in range(3):
        up = params.copy()
        dn = params.copy()
        up[i] += steps[i]
        dn[i] = max(dn[i] - steps[i], 1e-12 if i == 0 else 0.0)
        scores[:, i] = (terms(up) - terms(dn)) / (up[i] - dn[i])
    opg = scores.T @ scores / t_len

    def mean_ll(p):
        return float(terms(p).mean())

    hess = np.empty((3, 3))
    for i in range(3):
        for j in range(i, 3):
            pp = params.copy(); pp[i] += steps[i]; pp[j] += steps[j]
            pm = params.copy(); pm[i] += steps[i]; pm[j] -= steps[j]
            mp = params.copy(); mp[i] -= steps[i]; mp[j] += steps[j]
            mm = params.copy(); mm[i] -= steps[i]; mm[j] -= steps[j]
            val = (mean_ll(pp) - mean_ll(pm) - mean_ll(mp) + mean_ll(mm)) / (
                4.0 * steps[i] * steps[j]
            )
            hess[i, j] = hess[j, i] = val
    info = -hess
    try:
        info_inv = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return np.full(3, np.nan)
    cov = info_inv @ opg @ info_inv / t_len
    with np.errstate(invalid="ignore"):
        return np.sqrt(np.diag(cov))


def simulate_garch11(omega, alpha, beta, t_len, rng, burn=500):
    """GARCH(1,1) residual path driven by standard normal innovations."""
    z = rng.standard_normal(t_len + burn)
    eps, _ = garch11_simulate(z, omega, alpha, beta)
    return eps[burn:]


def half_life(alpha: float, beta: float) -> float:
    """Months for a variance shock to decay by half: 1 + ln(1/2)/ln(alpha+beta)."""
    persistence = alpha + beta
    if not 0.0 < persistence < 1.0:
        raise DegenerateFitError(
            f"half-life undefined for alpha+beta={persistence} outside (0, 1)"
        )
    return 1.0 + math.log(0.5) / math.log(persistence)


# ---------------------------------------------------------------------------
# diagnostics and predictive regressions
# ---------------------------------------------------------------------------

def ljung_box(series: np.ndarray, lags: int) -> tuple[float, float]:
    """Ljung-Box Q statistic and chi-square p-value for joint zero autocorrelation."""
    series = np.asarray(series, dtype=np.float64)
    t_len = series.shape[0]
    if lags < 1:
        raise ConfigError(f"lags must be >= 1, got {lags}")
    if lags >= t_len / 4:
        raise ConfigError(f"need lags < T/4 = {t_len / 4}, got {lags}")
    dev = series - series.mean()
    denom = float(dev @ dev)
    if denom <= 0.0 or np.ptp(series) == 0.0:
        raise DegenerateColumnError("autocorrelations undefined for a constant series")
    q_stat = 0.0
    for k in range(1, lags + 1):
        rho_k = float(dev[k:] @ dev[:-k]) / denom
        q_stat += rho_k**2 / (t_len - k)
    q_stat *= t_len * (t_len + 2.0)
    return q_stat, float(chi2.sf(q_stat, lags))


def _bartlett_hac(x: np.ndarray, u: np.ndarray, lags: int) -> np.ndarray:
    n, k = x.shape
    xu = x * u[:, None]
    cov = xu.T @ xu / n
    for j in range(1, lags + 1):
        gamma = xu[j:].T @ xu[:-j] / n
        cov += (1.0 - j / (lags + 1.0)) * (gamma + gamma.T)
    return cov


def predictive_regression(
    target_returns: np.ndarray,
    cond_mean: np.ndarray,
    cond_var: np.ndarray,
    horizon: int = 1,
    hac_lags: int = 15,
) -> list[dict]:
    """Regress h-period cumulative log returns on lagged SDF moments.

    Regressors at t-1 are [1, var_{t-1}, mean_{t-1} * var_{t-1}]; inference is
    Newey-West with Bartlett weights, a degrees-of-freedom correction, and a
    joint F test on the two slopes.
    """
    r = np.atleast_2d(np.asarray(target_returns, dtype=np.float64))
    if r.shape[0] == 1 and r.shape[1] > 1 and np.asarray(cond_mean).shape[0] == r.shape[1]:
        r = r.T
    t_len, n_assets = r.shape
    cond_mean = np.asarray(cond_mean, dtype=np.float64)
    cond_var = np.asarray(cond_var, dtype=np.float64)
    if cond_mean.shape != (t_len,) or cond_var.shape != (t_len,):
        raise ConfigError("conditional moment series must align with the returns")
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    if np.any(r <= -1.0):
        raise DataError("returns at or below -100% cannot be compounded to log returns")

    log_r = np.log1p(r)
    n_obs = t_len - horizon
    if n_obs < 10:
        raise InsufficientDataError("too few observations after lagging and cumulation")
    cum = np.empty((n_obs, n_assets))
    csum = np.vstack([np.zeros(n_assets), np.cumsum(log_r, axis=0)])
    for i, t in enumerate(range(1, t_len - horizon + 1)):
        cum[i] = csum[t + horizon] - csum[t]
    x = np.column_stack([
        np.ones(n_obs),
        cond_var[: n_obs],
        cond_mean[: n_obs] * cond_var[: n_obs],
    ])
    if np.linalg.matrix_rank(x) < 3:
        raise SingularityError("predictive regressors are collinear")

    xtx = x.T @ x
    xtx_inv = np.linalg.inv(xtx)
    k = 3
    results = []
    for a in range(n_assets):
        y = cum[:, a]
        beta = xtx_inv @ (x.T @ y)
        u = y - x @ beta
        ss_res = float(u @ u)
        dev = y - y.mean()
        r2 = 1.0 - ss_res / float(dev @ dev)
        hac = _bartlett_hac(x, u, hac_lags)
        cov_beta = (n_obs / (n_obs - k)) * n_obs * (xtx_inv @ hac @ xtx_inv)
        slopes = beta[1:]
        sub = cov_beta[1:, 1:]
        try:
            f_stat = float(slopes @ np.linalg.solve(sub, slopes)) / 2.0
        except np.linalg.LinAlgError:
            raise SingularityError("HAC covariance of the slopes is singular") from None
        p_value = float(f_dist.sf(f_stat, 2, n_obs - k))
        results.append({
            "r2": float(r2),
            "f_stat": f_stat,
            "p_value": p_value,
            "coef": beta,
            "se": np.sqrt(np.diag(cov_beta)),
        })
    return results
