"""Command-line entry point wiring all estimation and evaluation pipelines."""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .bma import BmaSdf
from .benchmark_models import gls_gmm, ridge_sdf_cv, rp_pca
from .config import load_config, prior_config_from
from .dynamics import fit_arma, fit_garch11, half_life, ljung_box, predictive_regression
from .errors import ConfigError, DataError, NumericalError, ZooSdfError
from .gibbs import draws_to_table, merge_draws, run_chains
from .panel import load_panel, standardize
from .pricing import cross_section_fit, implied_premia
from .simlab import hml_like_config, run_experiment
from .trading import equal_weight_estimator, expanding_backtest

USAGE_EXIT, DATA_EXIT, NUMERICAL_EXIT = 1, 2, 3


def _np_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def write_json_atomic(payload: dict, path: str):
    """Write via a temp file and rename, so readers never see partial output."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=target.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=_np_default)
            fh.write("\n")
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv_atomic(frame: pd.DataFrame, path: str):
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=target.name, suffix=".tmp")
    os.close(fd)
    try:
        frame.to_csv(tmp, float_format="%.17g")
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _stamp(payload: dict) -> dict:
    payload["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    payload["version"] = __version__
    return payload


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("ZOO_SDF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"ZOO_SDF_THREADS must be an integer, got {env!r}") from None
    return 1


def _load_standardized(args):
    panel = load_panel(args.returns, args.factors, args.meta)
    return standardize(panel)


def _read_series_csv(path, what: str) -> tuple[list[str], np.ndarray, list[str]]:
    try:
        df = pd.read_csv(path, dtype={0: str}, float_precision="round_trip")
    except FileNotFoundError:
        raise DataError(f"{what} file not found: {path}") from None
    if df.columns[0] != "date":
        raise DataError(f"{what} file must have a leading 'date' column")
    values = df.iloc[:, 1:].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{what} file contains non-finite values")
    return [str(d) for d in df.iloc[:, 0]], values, list(df.columns[1:])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_estimate(args) -> int:
    panel = _load_standardized(args)
    config = load_config(args.config) if args.config else {}
    prior = prior_config_from(
        config, panel, prior_sr_fraction=args.prior_sr, psi=args.psi, r=args.r,
    )
    subsets = []
    if args.sr_subsets:
        for block in args.sr_subsets.split(";"):
            subsets.append(tuple(int(x) for x in block.split(",") if x != ""))
    chains = run_chains(
        panel, prior, n_chains=args.chains, n_draws=args.draws, burn_in=args.burn_in,
        thin=args.thin, seed=args.seed, sr_subsets=tuple(subsets),
        processes=_threads(args),
    )
    draws = merge_draws(chains)
    bundle = BmaSdf.from_draws(draws, panel)
    report = bundle.report(draws, subsets=subsets or None)
    report["chains"] = {
        "n_chains": args.chains, "n_draws": args.draws,
        "burn_in": args.burn_in, "thin": args.thin, "seed": args.seed,
        "retained": draws.n_kept,
    }
    if args.chains > 1:
        report["chains"]["rhat_lambda_max"] = _max_rhat(chains)
    write_json_atomic(_stamp(report), args.out)
    if args.sdf_out:
        frame = pd.DataFrame(
            {"sdf": bundle.sdf_series}, index=pd.Index(panel.dates, name="date")
        )
        write_csv_atomic(frame, args.sdf_out)
    if args.dump_draws:
        header, mat = draws_to_table(draws)
        write_csv_atomic(
            pd.DataFrame(mat, columns=header).set_index("draw"), args.dump_draws
        )
    return 0


def _max_rhat(chains) -> float:
    """Split-free Gelman-Rubin statistic over the lambda components."""
    worst = 1.0
    n = min(c.n_kept for c in chains)
    for j in range(chains[0].lambdas.shape[1]):
        series = np.stack([c.lambdas[:n, j] for c in chains])
        within = series.var(axis=1, ddof=1).mean()
        between = n * series.mean(axis=1).var(ddof=1)
        if within > 0:
            worst = max(worst, float(np.sqrt((n - 1) / n + between / (n * within))))
    return worst


def cmd_simulate(args) -> int:
    cfg = hml_like_config(
        t_len=args.T, repetitions=args.reps, seed=args.seed,
        prior_sr_fraction=args.prior_sr if args.prior_sr is not None else 0.6,
        n_draws=args.draws, burn_in=args.burn_in,
        **({"lambda_true": args.lambda_true} if args.lambda_true is not None else {}),
    )
    summary = run_experiment(args.experiment, cfg, processes=_threads(args))
    write_json_atomic(_stamp(summary.as_dict()), args.out)
    return 0


def cmd_price(args) -> int:
    dates_sdf, sdf_values, _ = _read_series_csv(args.sdf, "sdf")
    sdf = sdf_values[:, 0]
    sigma_full = None
    if args.gls_window == "full":
        if not args.sigma_full:
            raise ConfigError("--gls-window full requires --sigma-full <covariance.csv>")
        sigma_full = pd.read_csv(args.sigma_full, index_col=0).to_numpy(dtype=np.float64)
    if args.assets:
        report = _price_one(args.assets, dates_sdf, sdf, sigma_full)
        write_json_atomic(_stamp(report), args.out)
        return 0
    reports = {}
    directory = Path(args.assets_dir)
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise DataError(f"no CSV cross-sections found in {directory}")
    for path in files:
        reports[path.stem] = _price_one(path, dates_sdf, sdf, sigma_full)
    r2s = [rep["r2_ols"] for rep in reports.values()]
    gls = [rep["r2_gls"] for rep in reports.values()]
    payload = {
        "cross_sections": reports,
        "distribution": {
            "n": len(r2s),
            "r2_ols": {"median": float(np.median(r2s)), "q05": float(np.quantile(r2s, 0.05)),
                       "q95": float(np.quantile(r2s, 0.95))},
            "r2_gls": {"median": float(np.median(gls)), "q05": float(np.quantile(gls, 0.05)),
                       "q95": float(np.quantile(gls, 0.95))},
        },
    }
    write_json_atomic(_stamp(payload), args.out)
    return 0


def _price_one(asset_path, dates_sdf, sdf, sigma_full=None) -> dict:
    dates_a, rets, _names = _read_series_csv(asset_path, "assets")
    if dates_a != dates_sdf:
        raise DataError(f"dates in {asset_path} do not align with the SDF series")
    premia = implied_premia(sdf, rets)
    realized = rets.mean(axis=0)
    if sigma_full is not None:
        sigma = sigma_full
    else:
        dev = rets - realized
        sigma = dev.T @ dev / (rets.shape[0] - 1)
    return cross_section_fit(premia, realized, sigma, label=str(asset_path)).as_dict()


def cmd_benchmark(args) -> int:
    panel = _load_standardized(args)
    cols = [c for c in (args.factor_cols or "").split(",") if c]
    name_to_idx = {n: i for i, n in enumerate(panel.factor_names)}
    missing = [c for c in cols if c not in name_to_idx]
    if missing:
        raise DataError(f"factor columns not in panel: {missing}")
    idx = [name_to_idx[c] for c in cols]

    if args.model in ("capm", "gls"):
        if args.model == "capm" and len(idx) != 1:
            raise ConfigError("capm requires exactly one factor column")
        if not idx:
            raise ConfigError(f"{args.model} requires --factors-cols")
        lam, report = gls_gmm(panel.factors[:, idx], panel)
        payload = {"model": args.model, "lambda": lam.tolist(), "factors": cols}
    elif args.model == "ridge":
        shrinkages = [float(x) for x in args.shrinkages.split(",")]
        comps = [int(x) for x in args.components.split(",")]
        weights, (eta, n_comp) = ridge_sdf_cv(panel, shrinkages, comps)
        mu = panel.returns.mean(axis=0)
        dev = panel.returns - mu
        sigma = dev.T @ dev / (panel.n_periods - 1)
        report = cross_section_fit(sigma @ weights, mu, sigma, label="ridge")
        payload = {
            "model": "ridge", "weights": weights.tolist(),
            "selected": {"shrinkage": eta, "n_components": n_comp},
        }
    elif args.model == "rppca":
        comps = int(args.components)
        _, report = rp_pca(panel, comps, gamma=args.gamma)
        payload = {"model": "rppca", "n_components": comps, "gamma": args.gamma}
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown model {args.model}")
    if report is None:
        raise NumericalError("cross-section too small for a pricing report")
    payload["report"] = report.as_dict()
    write_json_atomic(_stamp(payload), args.out)
    return 0


def cmd_backtest(args) -> int:
    raw = load_panel(args.returns, args.factors, args.meta)
    config = load_config(args.config) if args.config else {}

    tradable_idx = np.where(raw.tradable_mask)[0]
    if tradable_idx.size == 0:
        raise DataError("panel has no tradable factors to invest in")
    ew_series = raw.factors[:, tradable_idx].mean(axis=1)

    if args.standardize_window == "full":
        from .panel import apply_scales

        full_ret_sd = raw.returns.std(axis=0, ddof=1)
        full_fac_sd = raw.factors.std(axis=0, ddof=1)

        def _standardized(train):
            return apply_scales(train, full_ret_sd, full_fac_sd)
    else:
        def _standardized(train):
            return standardize(train)

    if args.estimator == "ew":
        estimator = equal_weight_estimator
    elif args.estimator == "gls":
        def estimator(train):
            t_idx = np.where(train.tradable_mask)[0]
            std_train = _standardized(train)
            lam, _ = gls_gmm(std_train.factors[:, t_idx], std_train)
            return lam[1:]
    else:  # bma
        def estimator(train):
            std_train = _standardized(train)
            prior = prior_config_from(config, std_train, prior_sr_fraction=args.prior_sr)
            chains = run_chains(
                std_train, prior, n_chains=args.chains, n_draws=args.draws,
                burn_in=args.burn_in, seed=args.seed, processes=_threads(args),
                store_factor_cov=False,
            )
            draws = merge_draws(chains)
            mprs = draws.lambda_f.mean(axis=0)
            t_idx = np.where(train.tradable_mask)[0]
            return mprs[t_idx]

    result = expanding_backtest(
        raw, estimator, initial_window=args.initial_window,
        rebalance_every=args.rebalance, benchmark=ew_series,
        vol_scale_mode=args.vol_scale,
    )
    payload = {
        "estimator": args.estimator,
        "initial_window": args.initial_window,
        "rebalance_every": args.rebalance,
        "stats": result.stats.as_dict(),
        "rebalance_dates": result.rebalance_dates,
        "weights": [w.tolist() for w in result.weights],
        "oos_returns": result.oos_returns.tolist(),
    }
    write_json_atomic(_stamp(payload), args.out)
    return 0


def cmd_dynamics(args) -> int:
    _dates, values, _ = _read_series_csv(args.input, "input")
    series = values[:, 0]
    max_p, max_q = (int(x) for x in args.arma_max.split(","))
    arma = fit_arma(series, max_p, max_q, criterion=args.criterion)
    garch = fit_garch11(arma.residuals)
    lb_series = ljung_box(series, args.lb_lags)
    lb_sq = ljung_box(arma.residuals**2, args.lb_lags)
    payload = {
        "arma": {
            "order": list(arma.order), "mu": arma.mu,
            "phi": arma.phi.tolist(), "theta": arma.theta.tolist(),
            "sigma2": arma.sigma2, "aic": arma.aic, "bic": arma.bic,
        },
        "garch": {
            "omega": garch.omega, "alpha": garch.alpha, "beta": garch.beta,
            "robust_se": garch.robust_se.tolist(),
            "loglik": garch.loglik,
            "near_integrated": garch.near_integrated,
            "half_life_months": half_life(garch.alpha, garch.beta)
            if 0 < garch.alpha + garch.beta < 1 else None,
        },
        "ljung_box": {
            "lags": args.lb_lags,
            "series": {"stat": lb_series[0], "p_value": lb_series[1]},
            "squared_residuals": {"stat": lb_sq[0], "p_value": lb_sq[1]},
        },
    }
    write_json_atomic(_stamp(payload), args.out)
    return 0


def cmd_predict(args) -> int:
    _dates, values, _ = _read_series_csv(args.input, "input")
    series = values[:, 0]
    dates_t, targets, names = _read_series_csv(args.targets, "targets")
    if len(dates_t) != series.shape[0]:
        raise DataError("targets and SDF series must cover the same dates")
    max_p, max_q = (int(x) for x in args.arma_max.split(","))
    arma = fit_arma(series, max_p, max_q, criterion=args.criterion)
    garch = fit_garch11(arma.residuals)
    results = predictive_regression(
        targets, arma.fitted_mean, garch.conditional_variance,
        horizon=args.horizon, hac_lags=args.hac_lags,
    )
    payload = {
        "horizon": args.horizon,
        "hac_lags": args.hac_lags,
        "targets": {
            name: {"r2": res["r2"], "f_stat": res["f_stat"], "p_value": res["p_value"]}
            for name, res in zip(names, results)
        },
    }
    write_json_atomic(_stamp(payload), args.out)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _add_panel_args(sub):
    sub.add_argument("--returns", required=True, help="returns.csv: date,<asset...>")
    sub.add_argument("--factors", required=True, help="factors.csv: date,<factor...>")
    sub.add_argument("--meta", required=True,
                     help="meta.csv: name,tradable,asset_class,kappa_tilt")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="zoosdf", description="Factor-zoo BMA-SDF toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    common.add_argument("--threads", type=int, default=None,
                        help="worker processes (fallback: ZOO_SDF_THREADS)")
    common.add_argument("--json-errors", action="store_true",
                        help="emit machine-readable error JSON on stderr")
    common.add_argument("--config", default=None, help="YAML config file (prior.* keys)")

    subs = parser.add_subparsers(dest="command", required=True)

    est = subs.add_parser("estimate", parents=[common], help="Gibbs estimation + BMA report")
    _add_panel_args(est)
    est.add_argument("--prior-sr", type=float, default=None,
                     help="prior Sharpe fraction of the ex post maximum")
    est.add_argument("--psi", type=float, default=None, help="fixed psi scale")
    est.add_argument("--r", type=float, default=None, help="spike-to-slab variance ratio")
    est.add_argument("--chains", type=int, default=4)
    est.add_argument("--draws", type=int, default=25_000)
    est.add_argument("--burn-in", type=int, default=5_000)
    est.add_argument("--thin", type=int, default=1)
    est.add_argument("--sr-subsets", default=None,
                     help='factor index subsets for the SR decomposition, e.g. "0,1;2"')
    est.add_argument("--sdf-out", default=None, help="CSV export of the BMA-SDF series")
    est.add_argument("--dump-draws", default=None, help="CSV dump of the retained draws")
    est.add_argument("--out", required=True)
    est.set_defaults(func=cmd_estimate)

    sim = subs.add_parser("simulate", parents=[common], help="run a recovery experiment")
    sim.add_argument("--experiment", required=True, choices=list("I II III IV V VI".split()))
    sim.add_argument("--reps", type=int, default=200)
    sim.add_argument("--T", type=int, default=400)
    sim.add_argument("--lambda-true", type=float, default=None)
    sim.add_argument("--prior-sr", type=float, default=None)
    sim.add_argument("--draws", type=int, default=4000)
    sim.add_argument("--burn-in", type=int, default=1000)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    price = subs.add_parser("price", parents=[common], help="price cross-sections with an SDF")
    price.add_argument("--sdf", required=True, help="CSV with date,sdf columns")
    group = price.add_mutually_exclusive_group(required=True)
    group.add_argument("--assets", default=None, help="one cross-section CSV")
    group.add_argument("--assets-dir", default=None, help="directory of cross-section CSVs")
    price.add_argument("--gls-window", choices=["oos", "full"], default="oos",
                       help="covariance window for the GLS R^2")
    price.add_argument("--sigma-full", default=None,
                       help="full-sample covariance CSV (required for --gls-window full)")
    price.add_argument("--out", required=True)
    price.set_defaults(func=cmd_price)

    bench = subs.add_parser("benchmark", parents=[common], help="frequentist benchmark models")
    _add_panel_args(bench)
    bench.add_argument("--model", required=True, choices=["capm", "gls", "ridge", "rppca"])
    bench.add_argument("--factor-cols", default=None, help="comma-separated factor names")
    bench.add_argument("--components", default="5", help="component count(s)")
    bench.add_argument("--shrinkages", default="0.0001,0.001,0.01,0.1,1.0")
    bench.add_argument("--gamma", type=float, default=20.0, help="RP-PCA mean weight")
    bench.add_argument("--out", required=True)
    bench.set_defaults(func=cmd_benchmark)

    back = subs.add_parser("backtest", parents=[common], help="expanding-window backtest")
    _add_panel_args(back)
    back.add_argument("--initial-window", type=int, default=222)
    back.add_argument("--rebalance", type=int, default=12)
    back.add_argument("--estimator", choices=["bma", "ew", "gls"], default="bma")
    back.add_argument("--prior-sr", type=float, default=None)
    back.add_argument("--chains", type=int, default=1)
    back.add_argument("--draws", type=int, default=4000)
    back.add_argument("--burn-in", type=int, default=1000)
    back.add_argument("--vol-scale", choices=["full", "none"], default="full")
    back.add_argument("--standardize-window", choices=["train", "full"], default="train",
                      help="window for the standardization constants used in estimation")
    back.add_argument("--out", required=True)
    back.set_defaults(func=cmd_backtest)

    dyn = subs.add_parser("dynamics", parents=[common], help="ARMA-GARCH SDF dynamics")
    dyn.add_argument("--input", required=True, help="CSV with date,series columns")
    dyn.add_argument("--arma-max", default="3,3", help="max ARMA order 'p,q'")
    dyn.add_argument("--criterion", choices=["AIC", "BIC"], default="BIC")
    dyn.add_argument("--lb-lags", type=int, default=20)
    dyn.add_argument("--out", required=True)
    dyn.set_defaults(func=cmd_dynamics)

    pred = subs.add_parser("predict", parents=[common],
                           help="predictive regressions on lagged SDF moments")
    pred.add_argument("--input", required=True, help="CSV with date,sdf columns")
    pred.add_argument("--targets", required=True, help="CSV with date,<target...> columns")
    pred.add_argument("--horizon", type=int, default=12)
    pred.add_argument("--hac-lags", type=int, default=15)
    pred.add_argument("--arma-max", default="3,1")
    pred.add_argument("--criterion", choices=["AIC", "BIC"], default="BIC")
    pred.add_argument("--out", required=True)
    pred.set_defaults(func=cmd_predict)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_EXIT
    try:
        return args.func(args)
    except ConfigError as exc:
        _report_error(args, "config", exc)
        return USAGE_EXIT
    except DataError as exc:
        _report_error(args, "data", exc)
        return DATA_EXIT
    except NumericalError as exc:
        _report_error(args, "numerical", exc)
        return NUMERICAL_EXIT
    except ZooSdfError as exc:
        _report_error(args, "error", exc)
        return NUMERICAL_EXIT


def _report_error(args, kind: str, exc: Exception):
    if getattr(args, "json_errors", False):
        print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
    else:
        print(f"zoosdf: {kind} error: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
