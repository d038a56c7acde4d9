"""Calibrated synthetic panels and the six estimator-recovery experiments.

The data-generating process has one pseudo-true priced factor; candidate
menus mix a useless factor, the true factor, and noisy proxies with preset
correlations.  Test assets are the calibrated portfolios only; recovery is
measured by the premium the estimated SDF assigns to the latent true risk,
which is the quantity that converges to lambda_true even when only noisy
proxies are observed (the delta and 1/delta biases cancel in it).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .benchmark_models import gls_gmm
from .errors import CalibrationError, ConfigError, NumericalError
from .gibbs import run_chain
from .panel import FactorMeta, ReturnPanel, standardize
from .priors import PriorConfig

EXPERIMENT_MENUS = {
    "I": ("u_f", "f_true"),
    "II": ("u_f", "f_true", "f_1"),
    "III": ("u_f", "f_true", "f_1", "f_2"),
    "IV": ("u_f", "f_1"),
    "V": ("u_f", "f_1", "f_2"),
    "VI": ("u_f", "f_1", "f_2", "f_3", "f_4"),
}

DEFAULT_DELTAS = (0.4, 0.3, 0.2, 0.1)


@dataclass(frozen=True)
class SimConfig:
    lambda_true: float
    loadings: np.ndarray
    sigma_r: np.ndarray
    deltas: tuple[float, ...] = DEFAULT_DELTAS
    include_true_factor: bool = True
    include_useless: bool = True
    t_len: int = 400
    repetitions: int = 200
    seed: int = 0
    prior_sr_fraction: float = 0.6
    n_draws: int = 4000
    burn_in: int = 1000

    def __post_init__(self):
        loadings = np.asarray(self.loadings, dtype=np.float64)
        sigma_r = np.asarray(self.sigma_r, dtype=np.float64)
        object.__setattr__(self, "loadings", loadings)
        object.__setattr__(self, "sigma_r", sigma_r)
        if any(abs(d) >= 1.0 for d in self.deltas):
            raise ConfigError("proxy correlations must lie in (-1, 1)")
        if sigma_r.shape != (loadings.shape[0],) * 2:
            raise ConfigError("sigma_r must be N x N for N loadings")
        innov = sigma_r - np.outer(loadings, loadings)
        if np.linalg.eigvalsh((innov + innov.T) / 2)[0] <= 0.0:
            raise ConfigError(
                "sigma_r - C C' must be positive definite (innovation covariance)"
            )


def hml_like_config(**overrides) -> SimConfig:
    """Default calibration mimicking a value-like factor on 25 portfolios.

    Returns carry a dominant market-type component orthogonal to the priced
    factor plus a small idiosyncratic floor, so the value loadings are
    dispersed on both sides of zero while most of the variance is common --
    the covariance texture of size/book-to-market portfolios.
    """
    n_assets = 25
    beta_market = np.linspace(0.8, 1.2, n_assets)
    loadings = np.linspace(-0.6, 0.9, n_assets)
    sigma_r = (
        np.outer(loadings, loadings)
        + 1.5 * np.outer(beta_market, beta_market)
        + 0.10 * np.eye(n_assets)
    )
    base = dict(lambda_true=0.22, loadings=loadings, sigma_r=sigma_r)
    base.update(overrides)
    return SimConfig(**base)


def _menu(cfg: SimConfig) -> tuple[str, ...]:
    names = []
    if cfg.include_useless:
        names.append("u_f")
    if cfg.include_true_factor:
        names.append("f_true")
    names.extend(f"f_{i + 1}" for i in range(len(cfg.deltas)))
    return tuple(names)


def _generate_with_latent(cfg: SimConfig, rng: np.random.Generator) -> tuple[ReturnPanel, np.ndarray]:
    n = cfg.loadings.shape[0]
    t_len = cfg.t_len
    f_true = rng.standard_normal(t_len)

    columns = {}
    if cfg.include_useless:
        columns["u_f"] = rng.standard_normal(t_len)
    if cfg.include_true_factor:
        columns["f_true"] = f_true
    for i, delta in enumerate(cfg.deltas):
        noise = rng.standard_normal(t_len)
        columns[f"f_{i + 1}"] = delta * f_true + np.sqrt(1.0 - delta**2) * noise

    innov_cov = cfg.sigma_r - np.outer(cfg.loadings, cfg.loadings)
    chol = np.linalg.cholesky((innov_cov + innov_cov.T) / 2)
    shocks = rng.standard_normal((t_len, n)) @ chol.T
    mu_r = cfg.loadings * cfg.lambda_true
    returns = mu_r + np.outer(f_true, cfg.loadings) + shocks

    names = _menu(cfg)
    factors = np.column_stack([columns[name] for name in names])
    meta = tuple(FactorMeta(name, True, "stock") for name in names)
    dates = tuple(f"{i // 12:06d}-{i % 12 + 1:02d}" for i in range(t_len))
    panel = ReturnPanel(
        dates=dates, returns=returns, factors=factors, factor_meta=meta,
        asset_names=tuple(f"P{i + 1}" for i in range(n)),
    )
    return panel, f_true


def generate_sample(cfg: SimConfig, rng: np.random.Generator) -> ReturnPanel:
    """One synthetic panel: R_t = mu_R + C f_true,t + w_R,t with mu_R = C lambda_true.

    f_true has mean zero and unit variance; proxies
    f_j = delta_j f_true + sqrt(1 - delta_j^2) w_j have exact population
    correlation delta_j with it and unit variance; the useless factor is pure
    iid noise.  All innovations are Gaussian.
    """
    panel, _ = _generate_with_latent(cfg, rng)
    return panel


def calibrate_from_reference(reference_panel: ReturnPanel, factor_col: str) -> dict:
    """(lambda_true, loadings, sigma_r) from a GLS-GMM fit of one reference factor."""
    if factor_col not in reference_panel.factor_names:
        raise CalibrationError(f"factor {factor_col!r} not in the reference panel")
    j = reference_panel.factor_names.index(factor_col)
    f = reference_panel.factors[:, j]
    sd = f.std(ddof=1)
    if sd <= 1e-12 * max(1.0, abs(f.mean())):
        raise CalibrationError("reference factor has zero variance")
    f_std = f / sd
    try:
        lam, _ = gls_gmm(f_std, reference_panel)
    except NumericalError as exc:
        raise CalibrationError(f"reference cross-section is degenerate: {exc}") from exc
    dev_r = reference_panel.returns - reference_panel.returns.mean(axis=0)
    dev_f = f_std - f_std.mean()
    loadings = dev_r.T @ dev_f / (reference_panel.n_periods - 1)
    sigma_r = dev_r.T @ dev_r / (reference_panel.n_periods - 1)
    return {"lambda_true": float(lam[-1]), "loadings": loadings, "sigma_r": sigma_r}


@dataclass
class ExperimentSummary:
    """Distributions over repetitions of the recovery diagnostics.

    ``total_mpr`` is the premium the estimated BMA-SDF assigns to the latent
    true risk, -cov(M, f_true)/var(f_true); ``sdf_vol`` is the SDF dispersion
    sqrt(mprs' Sigma_f mprs).  The two coincide when the true factor itself is
    in the menu and carries the weight.
    """

    experiment: str
    factor_names: tuple[str, ...]
    lambda_true: float
    t_len: int
    total_mpr: np.ndarray          # reps
    sdf_vol: np.ndarray            # reps
    factor_probs: np.ndarray       # reps x K
    factor_mprs: np.ndarray        # reps x K
    n_failures: int
    rep_seeds: list[int] = field(default_factory=list)

    def quantiles(self, qs=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict:
        return {
            "total_mpr": {str(q): float(np.quantile(self.total_mpr, q)) for q in qs},
            "factor_probs_mean": self.factor_probs.mean(axis=0).tolist(),
            "factor_mprs_median": np.median(self.factor_mprs, axis=0).tolist(),
        }

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "factor_names": list(self.factor_names),
            "lambda_true": self.lambda_true,
            "t_len": self.t_len,
            "n_failures": self.n_failures,
            "summary": self.quantiles(),
            "repetitions": {
                "total_mpr": self.total_mpr.tolist(),
                "sdf_vol": self.sdf_vol.tolist(),
                "factor_probs": self.factor_probs.tolist(),
                "factor_mprs": self.factor_mprs.tolist(),
            },
        }


def _config_for_experiment(exp_id: str, cfg: SimConfig) -> SimConfig:
    if exp_id not in EXPERIMENT_MENUS:
        raise ConfigError(f"unknown experiment {exp_id!r}; choose from {sorted(EXPERIMENT_MENUS)}")
    menu = EXPERIMENT_MENUS[exp_id]
    n_proxies = sum(1 for m in menu if m.startswith("f_") and m != "f_true")
    return replace(
        cfg,
        include_useless="u_f" in menu,
        include_true_factor="f_true" in menu,
        deltas=DEFAULT_DELTAS[:n_proxies],
    )


def _one_repetition(args) -> tuple[np.ndarray, np.ndarray, float, float, int]:
    cfg, seed = args
    attempts = 0
    while True:
        try:
            rng = np.random.default_rng(seed + attempts)
            raw, f_true = _generate_with_latent(cfg, rng)
            panel = standardize(raw)
            prior = PriorConfig(prior_sr_fraction=cfg.prior_sr_fraction)
            draws = run_chain(
                panel, prior, n_draws=cfg.n_draws, burn_in=cfg.burn_in,
                seed=seed + attempts, store_factor_cov=False,
            )
            mprs = draws.lambda_f.mean(axis=0)
            probs = draws.gammas.mean(axis=0)
            dev = panel.factors - panel.factors.mean(axis=0)
            series = 1.0 - dev @ mprs
            sdf_vol = float(series.std(ddof=1))
            dm = series - series.mean()
            df = f_true - f_true.mean()
            implied = -float(dm @ df) / (cfg.t_len - 1) / float(f_true.var(ddof=1))
            return probs, mprs, implied, sdf_vol, attempts
        except NumericalError:
            attempts += 1
            if attempts > 3:
                raise


def run_experiment(exp_id: str, cfg: SimConfig, processes: int = 1) -> ExperimentSummary:
    """Repeat generate -> estimate -> summarize for one experiment menu."""
    cfg = _config_for_experiment(exp_id, cfg)
    seeds = [
        int(s.generate_state(1)[0])
        for s in np.random.SeedSequence(cfg.seed).spawn(cfg.repetitions)
    ]
    jobs = [(cfg, s) for s in seeds]
    if processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            results = list(pool.map(_one_repetition, jobs, chunksize=4))
    else:
        results = [_one_repetition(job) for job in jobs]

    names = _menu(cfg)
    k = len(names)
    probs = np.array([r[0] for r in results]).reshape(cfg.repetitions, k)
    mprs = np.array([r[1] for r in results]).reshape(cfg.repetitions, k)
    totals = np.array([r[2] for r in results])
    vols = np.array([r[3] for r in results])
    failures = int(sum(r[4] for r in results))
    return ExperimentSummary(
        experiment=exp_id,
        factor_names=names,
        lambda_true=cfg.lambda_true,
        t_len=cfg.t_len,
        total_mpr=totals,
        sdf_vol=vols,
        factor_probs=probs,
        factor_mprs=mprs,
        n_failures=failures,
        rep_seeds=seeds,
    )
