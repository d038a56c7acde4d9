"""Posterior aggregation: factor probabilities, MPRs, the BMA-SDF, and summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .gibbs import PosteriorDraws
from .panel import ReturnPanel


def batch_se(x: np.ndarray, n_batches: int = 30) -> float:
    """Batch-means Monte Carlo standard error (robust to chain autocorrelation)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    n_batches = min(n_batches, n)
    size = n // n_batches
    if size == 0:
        return float(x.std(ddof=1) / np.sqrt(max(n, 1)))
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def factor_probabilities(draws: PosteriorDraws) -> tuple[np.ndarray, np.ndarray]:
    """Posterior inclusion probabilities E[gamma_j | data] with MC standard errors."""
    if draws.n_kept == 0:
        raise DataError("no retained draws")
    g = draws.gammas.astype(np.float64)
    probs = g.mean(axis=0)
    ses = np.array([batch_se(g[:, j]) for j in range(g.shape[1])])
    return probs, ses


def posterior_mprs(draws: PosteriorDraws) -> tuple[np.ndarray, np.ndarray]:
    """(E[lambda_j|data], E[lambda_j|data, gamma_j=1]) per factor.

    The conditional entry is NaN (a null flag, not zero) for factors never
    included in any retained draw.
    """
    if draws.n_kept == 0:
        raise DataError("no retained draws")
    lam = draws.lambda_f
    mprs = lam.mean(axis=0)
    k = lam.shape[1]
    conditional = np.full(k, np.nan)
    for j in range(k):
        mask = draws.gammas[:, j] == 1
        if mask.any():
            conditional[j] = lam[mask, j].mean()
    return mprs, conditional


def bma_sdf_series(draws: PosteriorDraws, panel: ReturnPanel, mode: str = "factor_space") -> np.ndarray:
    """Posterior-mean SDF series M_t.

    ``factor_space`` uses the aggregated weights E[lambda_j|data]; ``model_space``
    averages the per-draw SDFs.  The two coincide exactly by linearity.
    """
    if mode not in ("factor_space", "model_space"):
        raise ConfigError(f"unknown mode {mode!r}")
    dev = panel.factors - panel.factors.mean(axis=0)
    if mode == "factor_space":
        mprs, _ = posterior_mprs(draws)
        return 1.0 - dev @ mprs
    total = np.zeros(panel.n_periods)
    chunk = 4096
    lam = draws.lambda_f
    for start in range(0, draws.n_kept, chunk):
        block = lam[start : start + chunk]
        total += (1.0 - dev @ block.T).sum(axis=1)
    return total / draws.n_kept


def sdf_series_from_mprs(
    mprs: np.ndarray, factors: np.ndarray, factor_means: np.ndarray
) -> np.ndarray:
    """M_t = 1 - (f_t - f_bar)' mprs with externally supplied centering means."""
    return 1.0 - (np.asarray(factors) - np.asarray(factor_means)) @ np.asarray(mprs)


def _subset_sharpe_samples(draws: PosteriorDraws, subset: tuple[int, ...]) -> np.ndarray:
    key = tuple(int(i) for i in subset)
    if key in draws.subset_sharpes:
        return draws.subset_sharpes[key]
    if draws.factor_covs is not None:
        idx = np.asarray(key, dtype=np.intp)
        lam = draws.lambda_f[:, idx]
        quad = np.einsum("ti,tij,tj->t", lam, draws.factor_covs[:, idx[:, None], idx[None, :]], lam)
        return np.sqrt(np.maximum(quad, 0.0))
    raise ConfigError(
        f"subset {key} was not recorded at chain time and per-draw factor "
        "covariances were not stored; pass sr_subsets to run_chain"
    )


def sdf_sharpe_decomposition(
    draws: PosteriorDraws, subsets: list[tuple[int, ...]]
) -> tuple[list[dict], np.ndarray]:
    """Per-subset (E[SR_S|data], E[SR_S^2/SR_m^2|data]) plus the full-SDF SR sample.

    Each per-draw subset Sharpe uses the factor covariance block of the same
    time-series draw as the lambda draw.
    """
    full = draws.sdf_sharpes
    rows = []
    for subset in subsets:
        key = tuple(int(i) for i in subset)
        if len(key) == 0:
            rows.append({"subset": key, "mean_sr": 0.0, "mean_sr2_share": 0.0})
            continue
        if any(i < 0 or i >= draws.n_factors for i in key):
            raise ConfigError(f"subset {key} out of range for K={draws.n_factors}")
        sr = _subset_sharpe_samples(draws, key)
        with np.errstate(divide="ignore", invalid="ignore"):
            share = np.where(full > 0.0, (sr / np.where(full > 0.0, full, 1.0)) ** 2, np.nan)
        rows.append({
            "subset": key,
            "mean_sr": float(sr.mean()),
            "mean_sr2_share": float(np.nanmean(share)),
        })
    return rows, full


def dimensionality_distribution(draws: PosteriorDraws) -> dict:
    """Posterior histogram of the number of included factors."""
    sizes = draws.model_sizes
    k = draws.n_factors
    counts = np.bincount(sizes, minlength=k + 1)
    q05, q50, q95 = np.quantile(sizes, [0.05, 0.50, 0.95])
    return {
        "counts": counts,
        "probs": counts / sizes.shape[0],
        "mean": float(sizes.mean()),
        "q05": float(q05),
        "median": float(q50),
        "q95": float(q95),
    }


@dataclass
class BmaSdf:
    """All posterior summaries of the Bayesian-model-averaged SDF."""

    factor_names: tuple[str, ...]
    factor_probs: np.ndarray
    factor_prob_ses: np.ndarray
    mprs: np.ndarray
    conditional_mprs: np.ndarray
    sdf_series: np.ndarray
    sr_posterior: np.ndarray
    dim_posterior: np.ndarray

    @classmethod
    def from_draws(cls, draws: PosteriorDraws, panel: ReturnPanel) -> "BmaSdf":
        probs, ses = factor_probabilities(draws)
        mprs, cond = posterior_mprs(draws)
        return cls(
            factor_names=draws.factor_names,
            factor_probs=probs,
            factor_prob_ses=ses,
            mprs=mprs,
            conditional_mprs=cond,
            sdf_series=bma_sdf_series(draws, panel, "factor_space"),
            sr_posterior=draws.sdf_sharpes,
            dim_posterior=draws.model_sizes,
        )

    def report(self, draws: PosteriorDraws, subsets: list[tuple[int, ...]] | None = None) -> dict:
        """JSON-ready report with the four External Interface blocks."""
        blocks = {
            "factor_probs": {
                name: {"prob": float(p), "mc_se": float(se)}
                for name, p, se in zip(self.factor_names, self.factor_probs, self.factor_prob_ses)
            },
            "mprs": {
                name: {
                    "mpr": float(m),
                    "conditional_mpr": None if np.isnan(c) else float(c),
                }
                for name, m, c in zip(self.factor_names, self.mprs, self.conditional_mprs)
            },
            "sr_decomposition": {
                "full_sdf_mean_sr": float(self.sr_posterior.mean()),
                "subsets": [],
            },
            "dimensionality": {
                key: value.tolist() if isinstance(value, np.ndarray) else value
                for key, value in dimensionality_distribution(draws).items()
            },
        }
        if subsets:
            rows, _ = sdf_sharpe_decomposition(draws, subsets)
            blocks["sr_decomposition"]["subsets"] = [
                {
                    "factors": [self.factor_names[i] for i in row["subset"]],
                    "mean_sr": row["mean_sr"],
                    "mean_sr2_share": row["mean_sr2_share"],
                }
                for row in rows
            ]
        return blocks
