"""Gibbs sampler for the hierarchical cross-sectional model.

Sweep order per iteration: (mu_Y, Sigma_Y) -> cross-section extraction ->
lambda -> gamma (fresh random permutation) -> omega -> sigma^2.  All density
ratios are evaluated in log space, and each sweep shares a single Cholesky
factorization of Sigma_R.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, logit

from .errors import ConfigError, DegeneratePosteriorError, NumericalError
from .panel import ReturnPanel
from .priors import DiagonalPenalty, PriorConfig, PriorState, build_D, build_prior_state, compute_psi
from .tslayer import CrossSectionInputs, TimeSeriesSampler, extract_cross_section, sample_moments_cross_section

_PSI_FLOOR = 1e-300


@dataclass(frozen=True)
class CrossSectionDraw:
    """One retained draw of the cross-sectional parameters."""

    lam: np.ndarray
    gamma: np.ndarray
    omega: np.ndarray
    sigma2: float


@dataclass
class ChainMeta:
    seed: int
    n_draws: int
    burn_in: int
    thin: int
    n_chains: int = 1
    gibbs_moves_only: bool = True  # recorded for audit; no MH steps exist


@dataclass
class PosteriorDraws:
    """Stored chain (post burn-in, thinned) plus per-draw functionals."""

    lambdas: np.ndarray                 # n_kept x n_lambda
    gammas: np.ndarray                  # n_kept x K
    omegas: np.ndarray                  # n_kept x K
    sigma2s: np.ndarray                 # n_kept
    sdf_sharpes: np.ndarray             # n_kept
    model_sizes: np.ndarray             # n_kept
    include_intercept: bool
    excluded: np.ndarray                # K bool, exact-exclusion flags
    factor_names: tuple[str, ...]
    meta: ChainMeta
    subset_sharpes: dict[tuple[int, ...], np.ndarray] = field(default_factory=dict)
    factor_covs: np.ndarray | None = None  # n_kept x K x K when stored

    @property
    def n_kept(self) -> int:
        return self.lambdas.shape[0]

    @property
    def n_factors(self) -> int:
        return self.gammas.shape[1]

    @property
    def lambda_f(self) -> np.ndarray:
        """Factor block of lambda (intercept column dropped if present)."""
        return self.lambdas[:, 1:] if self.include_intercept else self.lambdas

    def __getitem__(self, i: int) -> CrossSectionDraw:
        return CrossSectionDraw(
            lam=self.lambdas[i], gamma=self.gammas[i],
            omega=self.omegas[i], sigma2=float(self.sigma2s[i]),
        )


def merge_draws(chains: list[PosteriorDraws]) -> PosteriorDraws:
    """Concatenate per-chain draws (chains must share the model layout)."""
    first = chains[0]
    for other in chains[1:]:
        if other.include_intercept != first.include_intercept or other.n_factors != first.n_factors:
            raise ConfigError("cannot merge chains with different model layouts")
    subset_keys = set(first.subset_sharpes)
    merged_subsets = {
        key: np.concatenate([c.subset_sharpes[key] for c in chains]) for key in subset_keys
    }
    covs = None
    if all(c.factor_covs is not None for c in chains):
        covs = np.concatenate([c.factor_covs for c in chains], axis=0)
    meta = ChainMeta(
        seed=first.meta.seed, n_draws=first.meta.n_draws, burn_in=first.meta.burn_in,
        thin=first.meta.thin, n_chains=sum(c.meta.n_chains for c in chains),
    )
    return PosteriorDraws(
        lambdas=np.concatenate([c.lambdas for c in chains]),
        gammas=np.concatenate([c.gammas for c in chains]),
        omegas=np.concatenate([c.omegas for c in chains]),
        sigma2s=np.concatenate([c.sigma2s for c in chains]),
        sdf_sharpes=np.concatenate([c.sdf_sharpes for c in chains]),
        model_sizes=np.concatenate([c.model_sizes for c in chains]),
        include_intercept=first.include_intercept,
        excluded=first.excluded,
        factor_names=first.factor_names,
        meta=meta,
        subset_sharpes=merged_subsets,
        factor_covs=covs,
    )


# ---------------------------------------------------------------------------
# conditional draws
# ---------------------------------------------------------------------------

def _whiten(inputs: CrossSectionInputs):
    chol = np.linalg.cholesky(inputs.sigma_r)
    z_c = solve_triangular(chol, inputs.c_mat, lower=True, check_finite=False)
    z_mu = solve_triangular(chol, inputs.mu_r, lower=True, check_finite=False)
    return z_c, z_mu


def lambda_posterior(
    inputs: CrossSectionInputs, penalty: DiagonalPenalty, sigma2: float
) -> tuple[np.ndarray, np.ndarray]:
    """Conditional posterior mean and covariance of lambda (exact-excluded rows zero)."""
    z_c, z_mu = _whiten(inputs)
    active = penalty.active
    z_a = z_c[:, active]
    gram = z_a.T @ z_a + np.diag(penalty.diag[active])
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"lambda posterior system is not PD (condition ~{np.linalg.cond(gram):.3e})"
        ) from None
    half = solve_triangular(chol, np.eye(chol.shape[0]), lower=True, check_finite=False)
    cov_active = sigma2 * (half.T @ half)
    mean_active = cov_active @ (z_a.T @ z_mu) / sigma2
    n_lam = penalty.diag.shape[0]
    mean = np.zeros(n_lam)
    cov = np.zeros((n_lam, n_lam))
    mean[active] = mean_active
    cov[np.ix_(active, active)] = cov_active
    return mean, cov


def _sample_lambda_whitened(
    z_c: np.ndarray,
    z_mu: np.ndarray,
    penalty: DiagonalPenalty,
    sigma2: float,
    rng: np.random.Generator,
) -> np.ndarray:
    active = penalty.active
    z_a = z_c[:, active]
    gram = z_a.T @ z_a + np.diag(penalty.diag[active])
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"lambda posterior system is not PD (condition ~{np.linalg.cond(gram):.3e})"
        ) from None
    rhs = z_a.T @ z_mu
    lam_hat = solve_triangular(
        chol.T, solve_triangular(chol, rhs, lower=True, check_finite=False),
        lower=False, check_finite=False,
    )
    noise = solve_triangular(
        chol.T, rng.standard_normal(active.sum()), lower=False, check_finite=False
    )
    lam = np.zeros(penalty.diag.shape[0])
    lam[active] = lam_hat + math.sqrt(sigma2) * noise
    return lam


def sample_lambda(
    inputs: CrossSectionInputs,
    penalty: DiagonalPenalty,
    sigma2: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw lambda from N(lambda_hat, sigma^2 (C'S^-1C + D)^-1)."""
    z_c, z_mu = _whiten(inputs)
    return _sample_lambda_whitened(z_c, z_mu, penalty, sigma2, rng)


def gamma_inclusion_probs(
    lam_f: np.ndarray,
    omega: np.ndarray,
    sigma2: float,
    state: PriorState,
    cfg: PriorConfig,
) -> np.ndarray:
    """Per-factor inclusion probabilities; zero for exact-excluded factors."""
    slab_var = np.maximum(state.slab_scale, _PSI_FLOOR) * sigma2
    with np.errstate(divide="ignore"):
        log_odds = logit(omega)
    log_odds = log_odds + 0.5 * math.log(cfg.r) + lam_f**2 * (1.0 / cfg.r - 1.0) / (2.0 * slab_var)
    probs = expit(log_odds)
    probs[state.excluded] = 0.0
    return probs


def sample_gamma(
    lam_f: np.ndarray,
    omega: np.ndarray,
    sigma2: float,
    state: PriorState,
    cfg: PriorConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Bernoulli update of each gamma_j, visited in a fresh random permutation.

    The conditionals are mutually independent given (lambda, omega, sigma^2),
    so the permuted visit order only fixes how the uniform stream is consumed.
    """
    probs = gamma_inclusion_probs(lam_f, omega, sigma2, state, cfg)
    k = probs.shape[0]
    perm = rng.permutation(k)
    gamma = np.empty(k, dtype=np.int8)
    gamma[perm] = (rng.random(k) < probs[perm]).astype(np.int8)
    gamma[state.excluded] = 0
    return gamma


def sample_omega(gamma: np.ndarray, cfg: PriorConfig, rng: np.random.Generator) -> np.ndarray:
    """omega_j ~ Beta(gamma_j + a, 1 - gamma_j + b), independently per factor."""
    gamma = np.asarray(gamma, dtype=np.float64)
    return rng.beta(gamma + cfg.a_omega, 1.0 - gamma + cfg.b_omega)


def sigma2_shape_rate(
    inputs: CrossSectionInputs,
    lam: np.ndarray,
    penalty: DiagonalPenalty,
    prior_shape: float = 0.0,
    prior_rate: float = 0.0,
) -> tuple[float, float]:
    """Inverse-Gamma shape and rate of the sigma^2 full conditional.

    Exact-excluded entries carry no Gaussian prior mass, so only active
    lambda entries count toward the shape.
    """
    z_c, z_mu = _whiten(inputs)
    active = penalty.active
    resid = z_mu - z_c[:, active] @ lam[active]
    quad = float(resid @ resid) + float(lam[active] ** 2 @ penalty.diag[active])
    shape = (inputs.n_assets + int(active.sum())) / 2.0 + prior_shape
    rate = quad / 2.0 + prior_rate
    return shape, rate


def sample_sigma2(
    inputs: CrossSectionInputs,
    lam: np.ndarray,
    penalty: DiagonalPenalty,
    rng: np.random.Generator,
    prior_shape: float = 0.0,
    prior_rate: float = 0.0,
) -> float:
    shape, rate = sigma2_shape_rate(inputs, lam, penalty, prior_shape, prior_rate)
    if rate <= 0.0:
        raise DegeneratePosteriorError(
            "sigma^2 conditional has zero rate: exact fit with zero penalty"
        )
    return float(rate / rng.gamma(shape))


# ---------------------------------------------------------------------------
# full chain
# ---------------------------------------------------------------------------

def _subset_sharpe(lam_f: np.ndarray, fcov: np.ndarray, idx: np.ndarray) -> float:
    sub = lam_f[idx]
    return math.sqrt(max(float(sub @ fcov[np.ix_(idx, idx)] @ sub), 0.0))


def run_chain(
    panel: ReturnPanel,
    cfg: PriorConfig,
    n_draws: int = 25_000,
    burn_in: int = 5_000,
    thin: int = 1,
    seed: int = 0,
    sr_subsets: tuple[tuple[int, ...], ...] = (),
    store_factor_cov: bool | None = None,
    likelihood: str = "on",
    ts_mode: str = "sample",
    fix_gamma: np.ndarray | None = None,
) -> PosteriorDraws:
    """Run one Gibbs chain and return the retained draws.

    ``likelihood='off'`` (prior-only diagnostic) replaces the lambda update by
    a prior draw and freezes sigma^2.  ``ts_mode='fixed'`` plugs in the sample
    moments instead of sampling the time-series layer.
    """
    if not (n_draws > burn_in >= 0):
        raise ConfigError(f"need n_draws > burn_in >= 0, got {n_draws}, {burn_in}")
    if thin < 1:
        raise ConfigError("thin must be >= 1")
    if likelihood not in ("on", "off") or ts_mode not in ("sample", "fixed"):
        raise ConfigError("likelihood must be on|off and ts_mode sample|fixed")

    rng = np.random.default_rng(seed)
    sampler = TimeSeriesSampler(panel)
    k = panel.n_factors

    sample_inputs = sample_moments_cross_section(panel, cfg.include_intercept)
    state0, cfg = build_prior_state(sample_inputs, cfg)
    excluded = state0.excluded
    kappa = state0.kappa

    if store_factor_cov is None:
        store_factor_cov = k <= 16
    subsets = [np.asarray(s, dtype=np.intp) for s in sr_subsets]

    gamma = np.ones(k, dtype=np.int8)
    gamma[excluded] = 0
    if fix_gamma is not None:
        gamma = np.asarray(fix_gamma, dtype=np.int8).copy()
        gamma[excluded] = 0
    omega = np.full(k, cfg.a_omega / (cfg.a_omega + cfg.b_omega))
    sigma2 = 1.0

    kept = range(burn_in, n_draws, thin)
    n_kept = len(kept)
    n_lam = k + 1 if cfg.include_intercept else k
    lambdas = np.empty((n_kept, n_lam))
    gammas = np.empty((n_kept, k), dtype=np.int8)
    omegas = np.empty((n_kept, k))
    sigma2s = np.empty(n_kept)
    sharpes = np.empty(n_kept)
    sizes = np.empty(n_kept, dtype=np.int64)
    subset_sh = {tuple(int(i) for i in s): np.empty(n_kept) for s in subsets}
    covs = np.empty((n_kept, k, k)) if store_factor_cov else None

    fixed_draw = sampler.point_estimate() if ts_mode == "fixed" else None
    slice_f = slice(1, None) if cfg.include_intercept else slice(None)
    out = 0
    try:
        for it in range(n_draws):
            ts = sampler.draw(rng) if fixed_draw is None else fixed_draw
            inputs = extract_cross_section(ts, panel, cfg.include_intercept)
            if cfg.psi_from_sample:
                state = state0
            else:
                psi_vec = compute_psi(inputs.rho, cfg.psi, cfg.level_factor_mode)
                psi_vec[excluded] = 0.0
                psi_vec[~excluded] = np.maximum(psi_vec[~excluded], _PSI_FLOOR)
                state = PriorState(psi_vec=psi_vec, kappa=kappa)
            penalty = build_D(gamma, state, cfg)
            z_c, z_mu = _whiten(inputs)

            if likelihood == "on":
                lam = _sample_lambda_whitened(z_c, z_mu, penalty, sigma2, rng)
            else:
                lam = np.zeros(n_lam)
                active = penalty.active
                lam[active] = rng.standard_normal(int(active.sum())) * np.sqrt(
                    sigma2 / penalty.diag[active]
                )

            lam_f = lam[slice_f]
            if fix_gamma is None:
                gamma = sample_gamma(lam_f, omega, sigma2, state, cfg, rng)
            omega = sample_omega(gamma, cfg, rng)

            if likelihood == "on":
                penalty_now = build_D(gamma, state, cfg)
                resid = z_mu - z_c[:, penalty_now.active] @ lam[penalty_now.active]
                quad = float(resid @ resid) + float(
                    lam[penalty_now.active] ** 2 @ penalty_now.diag[penalty_now.active]
                )
                if quad <= 0.0:
                    raise DegeneratePosteriorError("sigma^2 conditional has zero rate")
                shape = (inputs.n_assets + int(penalty_now.active.sum())) / 2.0
                sigma2 = float((quad / 2.0) / rng.gamma(shape))

            if it >= burn_in and (it - burn_in) % thin == 0:
                lambdas[out] = lam
                gammas[out] = gamma
                omegas[out] = omega
                sigma2s[out] = sigma2
                sizes[out] = int(gamma.sum())
                sharpes[out] = math.sqrt(max(float(lam_f @ inputs.factor_cov @ lam_f), 0.0))
                for key, arr in subset_sh.items():
                    arr[out] = _subset_sharpe(lam_f, inputs.factor_cov, np.asarray(key, dtype=np.intp))
                if covs is not None:
                    covs[out] = inputs.factor_cov
                out += 1
    except NumericalError as exc:
        raise NumericalError(f"iteration {it}: {exc}") from exc

    meta = ChainMeta(seed=seed, n_draws=n_draws, burn_in=burn_in, thin=thin)
    return PosteriorDraws(
        lambdas=lambdas, gammas=gammas, omegas=omegas, sigma2s=sigma2s,
        sdf_sharpes=sharpes, model_sizes=sizes,
        include_intercept=cfg.include_intercept, excluded=excluded,
        factor_names=panel.factor_names, meta=meta,
        subset_sharpes=subset_sh, factor_covs=covs,
    )


def _chain_worker(args):
    panel, cfg, n_draws, burn_in, thin, seed, sr_subsets, store_factor_cov = args
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=1):
            return run_chain(panel, cfg, n_draws, burn_in, thin, seed,
                             sr_subsets=sr_subsets, store_factor_cov=store_factor_cov)
    except ImportError:
        return run_chain(panel, cfg, n_draws, burn_in, thin, seed,
                         sr_subsets=sr_subsets, store_factor_cov=store_factor_cov)


def run_chains(
    panel: ReturnPanel,
    cfg: PriorConfig,
    n_chains: int = 4,
    n_draws: int = 25_000,
    burn_in: int = 5_000,
    thin: int = 1,
    seed: int = 0,
    sr_subsets: tuple[tuple[int, ...], ...] = (),
    store_factor_cov: bool | None = None,
    processes: int = 1,
) -> list[PosteriorDraws]:
    """Run independent chains with seeds spawned deterministically from ``seed``."""
    child_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_chains)]
    jobs = [
        (panel, cfg, n_draws, burn_in, thin, s, sr_subsets, store_factor_cov)
        for s in child_seeds
    ]
    if processes > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(processes, n_chains)) as pool:
            return list(pool.map(_chain_worker, jobs))
    return [_chain_worker(job) for job in jobs]


def draws_to_table(draws: PosteriorDraws) -> tuple[list[str], np.ndarray]:
    """Header and matrix for the --dump-draws CSV export."""
    k = draws.n_factors
    if draws.include_intercept:
        lam_cols = [f"lambda_{j}" for j in range(k + 1)]
    else:
        lam_cols = [f"lambda_{j}" for j in range(1, k + 1)]
    header = (
        ["draw", "sigma2"]
        + lam_cols
        + [f"gamma_{j}" for j in range(1, k + 1)]
        + [f"omega_{j}" for j in range(1, k + 1)]
    )
    idx = np.arange(draws.n_kept, dtype=np.float64)[:, None]
    mat = np.hstack([
        idx, draws.sigma2s[:, None], draws.lambdas,
        draws.gammas.astype(np.float64), draws.omegas,
    ])
    return header, mat
