"""Tradable-portfolio construction and the expanding-window backtest."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateColumnError, NumericalError
from .panel import ReturnPanel, window

MONTHS_PER_YEAR = 12


def portfolio_weights(mprs: np.ndarray) -> np.ndarray:
    """Scale prices of risk to sum to one."""
    mprs = np.asarray(mprs, dtype=np.float64)
    total = float(mprs.sum())
    if total == 0.0:
        raise NumericalError("prices of risk sum to zero; portfolio direction is undefined")
    return mprs / total


def vol_scale(strategy_returns: np.ndarray, benchmark_returns: np.ndarray) -> np.ndarray:
    """Rescale a return series to the benchmark's volatility."""
    strategy = np.asarray(strategy_returns, dtype=np.float64)
    benchmark = np.asarray(benchmark_returns, dtype=np.float64)
    sd_s = strategy.std(ddof=1)
    sd_b = benchmark.std(ddof=1)
    if sd_s <= 0.0 or not np.isfinite(sd_s):
        raise DegenerateColumnError("strategy returns have zero variance")
    if sd_b <= 0.0 or not np.isfinite(sd_b):
        raise DegenerateColumnError("benchmark returns have zero variance")
    return strategy * (sd_b / sd_s)


@dataclass(frozen=True)
class PerfStats:
    ann_mean_pct: float
    sharpe: float
    information_ratio: float | None
    skewness: float
    kurtosis: float
    n_periods: int

    def as_dict(self) -> dict:
        return {
            "ann_mean_pct": self.ann_mean_pct,
            "sharpe": self.sharpe,
            "information_ratio": self.information_ratio,
            "skewness": self.skewness,
            "kurtosis": self.kurtosis,
            "n_periods": self.n_periods,
        }


def performance_stats(returns: np.ndarray, benchmark: np.ndarray | None = None) -> PerfStats:
    """Annualized mean/Sharpe/IR plus raw sample skewness and kurtosis."""
    r = np.asarray(returns, dtype=np.float64)
    mean = r.mean()
    sd = r.std(ddof=1)
    centered = r - mean
    m2 = (centered**2).mean()
    skew = (centered**3).mean() / m2**1.5
    kurt = (centered**4).mean() / m2**2
    ir = None
    if benchmark is not None:
        excess = r - np.asarray(benchmark, dtype=np.float64)
        sd_e = excess.std(ddof=1)
        ir = float(excess.mean() / sd_e * np.sqrt(MONTHS_PER_YEAR)) if sd_e > 0 else None
    return PerfStats(
        ann_mean_pct=float(mean * MONTHS_PER_YEAR * 100.0),
        sharpe=float(mean / sd * np.sqrt(MONTHS_PER_YEAR)),
        information_ratio=ir,
        skewness=float(skew),
        kurtosis=float(kurt),
        n_periods=r.shape[0],
    )


@dataclass
class BacktestResult:
    oos_returns: np.ndarray
    scaled_returns: np.ndarray
    stats: PerfStats
    weights: list[np.ndarray]
    rebalance_dates: list[str]
    benchmark_oos: np.ndarray | None


def expanding_backtest(
    panel: ReturnPanel,
    estimator: Callable[[ReturnPanel], np.ndarray],
    initial_window: int,
    rebalance_every: int,
    benchmark: Sequence[float] | str | None = None,
    vol_scale_mode: str = "full",
) -> BacktestResult:
    """Expanding-window out-of-sample backtest over the tradable factors.

    ``estimator`` maps a training sub-panel to prices of risk for the tradable
    factor columns; weights are held fixed for ``rebalance_every`` months.
    Only data up to each rebalance date ever reaches the estimator.
    ``benchmark`` may be a factor name or an aligned full-sample series; the
    out-of-sample slice is used for the information ratio and, unless
    ``vol_scale_mode='none'``, for volatility scaling of the whole OOS series.
    """
    if vol_scale_mode not in ("full", "none"):
        raise ConfigError("vol_scale_mode must be 'full' or 'none'")
    t_len = panel.n_periods
    if initial_window + rebalance_every > t_len:
        raise ConfigError(
            f"initial_window={initial_window} + rebalance_every={rebalance_every} "
            f"exceeds T={t_len}"
        )
    tradable = np.where(panel.tradable_mask)[0]
    if tradable.size == 0:
        raise ConfigError("panel has no tradable factors")

    bench_full = None
    if isinstance(benchmark, str):
        if benchmark not in panel.factor_names:
            raise ConfigError(f"benchmark factor {benchmark!r} not in panel")
        bench_full = panel.factors[:, panel.factor_names.index(benchmark)]
    elif benchmark is not None:
        bench_full = np.asarray(benchmark, dtype=np.float64)
        if bench_full.shape != (t_len,):
            raise ConfigError("benchmark series must align with the panel")

    oos_chunks = []
    bench_chunks = [] if bench_full is not None else None
    weights_hist = []
    rebalance_dates = []
    start = initial_window
    while start < t_len:
        train = window(panel, 0, start)
        try:
            mprs = np.asarray(estimator(train), dtype=np.float64)
        except Exception as exc:
            raise NumericalError(
                f"estimator failed at rebalance window ending {panel.dates[start - 1]}: {exc}"
            ) from exc
        if mprs.shape != (tradable.size,):
            raise ConfigError(
                f"estimator returned {mprs.shape}, expected ({tradable.size},)"
            )
        w = portfolio_weights(mprs)
        stop = min(start + rebalance_every, t_len)
        oos_chunks.append(panel.factors[start:stop][:, tradable] @ w)
        if bench_chunks is not None:
            bench_chunks.append(bench_full[start:stop])
        weights_hist.append(w)
        rebalance_dates.append(panel.dates[start])
        start = stop

    oos = np.concatenate(oos_chunks)
    bench_oos = np.concatenate(bench_chunks) if bench_chunks is not None else None
    scaled = oos
    if vol_scale_mode == "full" and bench_oos is not None:
        scaled = vol_scale(oos, bench_oos)
    stats = performance_stats(scaled, bench_oos)
    return BacktestResult(
        oos_returns=oos,
        scaled_returns=scaled,
        stats=stats,
        weights=weights_hist,
        rebalance_dates=rebalance_dates,
        benchmark_oos=bench_oos,
    )


def equal_weight_estimator(train: ReturnPanel) -> np.ndarray:
    """Fixed equal weights over the tradable factors (the EW benchmark row)."""
    n = int(train.tradable_mask.sum())
    return np.full(n, 1.0 / n)
