"""Spike-and-slab prior construction: psi penalties, kappa tilts, calibration.

The slab variance of factor j is (1 + kappa_j) * psi_j * sigma^2 and the spike
variance is r times that.  psi_j = psi * sum of squared (cross-sectionally
demeaned) correlations between factor j and the assets, which shrinks weak
factors automatically; psi itself is either given or calibrated from a target
prior Sharpe ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import CalibrationError, ConfigError
from .tslayer import CrossSectionInputs

EXACT_EXCLUSION_PSI = 0.0


@dataclass(frozen=True)
class PriorConfig:
    """All cross-sectional-layer hyperparameters."""

    r: float = 0.001
    a_omega: float = 1.0
    b_omega: float = 1.0
    psi: float | None = None
    prior_sr_fraction: float | None = None
    intercept_precision: float = 1e-6
    include_intercept: bool = True
    level_factor_mode: bool = False
    psi_from_sample: bool = False
    kappa: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise ConfigError(f"r must lie in (0, 1), got {self.r}")
        if (self.psi is None) == (self.prior_sr_fraction is None):
            raise ConfigError("exactly one of psi and prior_sr_fraction must be set")
        if self.psi is not None and self.psi <= 0.0:
            raise ConfigError("psi must be positive")
        if self.prior_sr_fraction is not None and not 0.0 < self.prior_sr_fraction <= 1.0:
            raise ConfigError("prior_sr_fraction must lie in (0, 1]")
        if self.a_omega <= 0.0 or self.b_omega <= 0.0:
            raise ConfigError("a_omega and b_omega must be positive")
        if self.intercept_precision < 0.0:
            raise ConfigError("intercept_precision must be nonnegative")
        if self.level_factor_mode and self.include_intercept:
            raise ConfigError("level_factor_mode requires include_intercept=False")
        if self.kappa is not None:
            kap = np.asarray(self.kappa, dtype=np.float64)
            if np.any(np.abs(kap) >= 1.0):
                raise ConfigError("kappa tilts must lie in (-1, 1)")
            if abs(float(kap.sum())) > 1e-12:
                raise ConfigError(f"kappa tilts must sum to 0, got {kap.sum():.3e}")
            object.__setattr__(self, "kappa", kap)

    def kappa_for(self, n_factors: int) -> np.ndarray:
        if self.kappa is None:
            return np.zeros(n_factors)
        if self.kappa.shape[0] != n_factors:
            raise ConfigError(
                f"kappa has {self.kappa.shape[0]} entries for {n_factors} factors"
            )
        return self.kappa


@dataclass(frozen=True)
class DiagonalPenalty:
    """Evaluated prior precision D for a given inclusion vector gamma.

    Exact-excluded factors (psi_j = 0) carry a flag rather than an infinite
    float: their lambda is pinned at zero and they never enter linear algebra.
    """

    diag: np.ndarray
    excluded: np.ndarray
    include_intercept: bool

    @property
    def active(self) -> np.ndarray:
        return ~self.excluded


@dataclass(frozen=True)
class PriorState:
    """Per-factor penalty scales and tilt vector; immutable and shareable."""

    psi_vec: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi_vec, dtype=np.float64)
        if np.any(psi < 0.0):
            raise ConfigError("psi_j must be nonnegative")
        object.__setattr__(self, "psi_vec", psi)
        object.__setattr__(self, "kappa", np.asarray(self.kappa, dtype=np.float64))

    @property
    def excluded(self) -> np.ndarray:
        return self.psi_vec == EXACT_EXCLUSION_PSI

    @property
    def slab_scale(self) -> np.ndarray:
        """(1 + kappa_j) * psi_j, the slab variance per unit sigma^2."""
        return (1.0 + self.kappa) * self.psi_vec


def compute_psi(rho: np.ndarray, psi: float, level_factor_mode: bool = False) -> np.ndarray:
    """Per-factor penalty scale from the N x K asset-factor correlations."""
    rho = np.asarray(rho, dtype=np.float64)
    if level_factor_mode:
        tilde = rho
    else:
        tilde = rho - rho.mean(axis=0, keepdims=True)
    return psi * np.einsum("ij,ij->j", tilde, tilde)


def build_D(gamma: np.ndarray, state: PriorState, cfg: PriorConfig) -> DiagonalPenalty:
    """Diagonal prior precision for the current inclusion vector."""
    gamma = np.asarray(gamma)
    r_of_gamma = np.where(gamma == 1, 1.0, cfg.r)
    excluded_f = state.excluded
    diag_f = np.empty_like(state.psi_vec)
    active = ~excluded_f
    diag_f[active] = 1.0 / ((1.0 + state.kappa[active]) * r_of_gamma[active] * state.psi_vec[active])
    diag_f[excluded_f] = np.inf
    if cfg.include_intercept:
        return DiagonalPenalty(
            diag=np.concatenate(([cfg.intercept_precision], diag_f)),
            excluded=np.concatenate(([False], excluded_f)),
            include_intercept=True,
        )
    return DiagonalPenalty(diag=diag_f, excluded=excluded_f.copy(), include_intercept=False)


def calibrate_psi(
    target_fraction: float,
    ex_post_max_sr: float,
    rho: np.ndarray,
    sigma2_plugin: float,
    cfg: PriorConfig,
) -> float:
    """Solve for the psi that hits a prior Sharpe ratio target.

    The prior expected squared Sharpe ratio achievable with standardized
    factors is (a/(a+b)) * psi * sigma^2 * sum_j (1+kappa_j) rho~_j' rho~_j as
    the spike collapses, so psi follows from the target in closed form.
    """
    unit = compute_psi(rho, 1.0, cfg.level_factor_mode)
    kappa = cfg.kappa_for(unit.shape[0])
    weight = float(np.sum((1.0 + kappa) * unit))
    if weight <= 0.0:
        raise CalibrationError("all factors are weak: sum of squared demeaned correlations is 0")
    if sigma2_plugin < 1e-12:
        raise CalibrationError(
            f"sigma2 plug-in is {sigma2_plugin:.3e}: the cross-section fits (near) exactly, "
            "so a prior Sharpe fraction cannot pin down psi; set psi directly"
        )
    inclusion = cfg.a_omega / (cfg.a_omega + cfg.b_omega)
    target = target_fraction * ex_post_max_sr
    return target**2 / (inclusion * sigma2_plugin * weight)


def sparsity_hyperparams(
    n_factors: int, target_mean_factors: float, two_sd_halfwidth_factors: float
) -> tuple[float, float]:
    """Beta(a, b) hyperparameters from a prior model-size mean and spread."""
    if not 0.0 < target_mean_factors < n_factors:
        raise CalibrationError(
            f"target mean must lie in (0, K), got {target_mean_factors} with K={n_factors}"
        )
    mean = target_mean_factors / n_factors
    var = (two_sd_halfwidth_factors / (2.0 * n_factors)) ** 2
    if var <= 0.0 or var >= mean * (1.0 - mean):
        raise CalibrationError(
            f"requested variance {var:.4g} is infeasible for a Beta with mean {mean:.4g}"
        )
    nu = mean * (1.0 - mean) / var - 1.0
    return mean * nu, (1.0 - mean) * nu


# ---------------------------------------------------------------------------
# plug-ins used when resolving psi from a prior Sharpe-ratio fraction
# ---------------------------------------------------------------------------

def ex_post_max_sharpe(mu_r: np.ndarray, sigma_r: np.ndarray) -> float:
    """sqrt(mu' Sigma^-1 mu): the ex post maximum Sharpe ratio of the assets."""
    sol = np.linalg.solve(sigma_r, mu_r)
    return float(np.sqrt(mu_r @ sol))


def plugin_sigma2(inputs: CrossSectionInputs, cfg: PriorConfig) -> float:
    """GLS residual variance of the unpenalized cross-sectional fit.

    Only the intercept precision c enters the system, so the plug-in is a
    deterministic function of the sample moments.
    """
    c_mat = inputs.c_mat
    n = inputs.n_assets
    chol = np.linalg.cholesky(inputs.sigma_r)
    z_c = np.linalg.solve(chol, c_mat)
    z_mu = np.linalg.solve(chol, inputs.mu_r)
    gram = z_c.T @ z_c
    if cfg.include_intercept:
        gram[0, 0] += cfg.intercept_precision
    lam = np.linalg.lstsq(gram, z_c.T @ z_mu, rcond=None)[0]
    resid = z_mu - z_c @ lam
    return float(resid @ resid / n)


def build_prior_state(inputs: CrossSectionInputs, cfg: PriorConfig) -> tuple[PriorState, PriorConfig]:
    """Resolve psi (calibrating from the Sharpe target if requested) and build state.

    Returns the state evaluated at the given cross-section inputs together
    with a config whose psi field is concrete.
    """
    if cfg.psi is None:
        sr_max = ex_post_max_sharpe(inputs.mu_r, inputs.sigma_r)
        sigma2 = plugin_sigma2(inputs, cfg)
        psi = calibrate_psi(cfg.prior_sr_fraction, sr_max, inputs.rho, sigma2, cfg)
        cfg = replace(cfg, psi=psi, prior_sr_fraction=None)
    psi_vec = compute_psi(inputs.rho, cfg.psi, cfg.level_factor_mode)
    return PriorState(psi_vec=psi_vec, kappa=cfg.kappa_for(inputs.n_factors)), cfg
