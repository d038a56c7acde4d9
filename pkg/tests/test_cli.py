import json
import os

import numpy as np
import pandas as pd
import pytest

from zoosdf.cli import main
from zoosdf.panel import save_panel

from conftest import toy_panel


@pytest.fixture
def panel_files(tmp_path):
    panel = toy_panel(seed=31, t_len=160, n_assets=4, n_factors=2, tradable=True)
    paths = (tmp_path / "returns.csv", tmp_path / "factors.csv", tmp_path / "meta.csv")
    save_panel(panel, *paths)
    return [str(p) for p in paths]


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def strip_volatile(payload):
    payload = dict(payload)
    payload.pop("timestamp", None)
    return payload


class TestEstimate:
    def test_report_blocks_and_sdf_export(self, panel_files, tmp_path):
        out = tmp_path / "report.json"
        sdf_out = tmp_path / "sdf.csv"
        dump = tmp_path / "draws.csv"
        code = main([
            "estimate", "--returns", panel_files[0], "--factors", panel_files[1],
            "--meta", panel_files[2], "--prior-sr", "0.8", "--chains", "2",
            "--draws", "400", "--burn-in", "100", "--seed", "7",
            "--sdf-out", str(sdf_out), "--dump-draws", str(dump),
            "--sr-subsets", "0;0,1", "--out", str(out),
        ])
        assert code == 0
        report = read_json(out)
        assert {"factor_probs", "mprs", "sr_decomposition", "dimensionality"} <= set(report)
        assert report["chains"]["retained"] == 2 * 300
        sdf = pd.read_csv(sdf_out)
        assert list(sdf.columns) == ["date", "sdf"]
        assert len(sdf) == 160
        draws = pd.read_csv(dump)
        assert list(draws.columns[:3]) == ["draw", "sigma2", "lambda_0"]

    def test_end_to_end_determinism(self, panel_files, tmp_path):
        argv = [
            "estimate", "--returns", panel_files[0], "--factors", panel_files[1],
            "--meta", panel_files[2], "--psi", "2.0", "--chains", "2",
            "--draws", "300", "--burn-in", "50", "--seed", "11",
        ]
        out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
        assert main(argv + ["--out", str(out1)]) == 0
        assert main(argv + ["--out", str(out2)]) == 0
        assert strip_volatile(read_json(out1)) == strip_volatile(read_json(out2))


class TestSimulate:
    def test_runs_and_is_deterministic(self, tmp_path):
        argv = [
            "simulate", "--experiment", "I", "--reps", "3", "--T", "400",
            "--draws", "300", "--burn-in", "100", "--seed", "1",
        ]
        out1, out2 = tmp_path / "s1.json", tmp_path / "s2.json"
        assert main(argv + ["--out", str(out1)]) == 0
        assert main(argv + ["--out", str(out2)]) == 0
        assert strip_volatile(read_json(out1)) == strip_volatile(read_json(out2))
        payload = read_json(out1)
        assert payload["experiment"] == "I"
        assert len(payload["repetitions"]["total_mpr"]) == 3


class TestPrice:
    def test_single_cross_section(self, tmp_path):
        rng = np.random.default_rng(0)
        t_len = 60
        dates = [f"{2000 + i // 12:04d}-{i % 12 + 1:02d}" for i in range(t_len)]
        sdf = 1.0 + 0.1 * rng.standard_normal(t_len)
        rets = rng.standard_normal((t_len, 3)) * 0.05 + 0.01
        pd.DataFrame({"date": dates, "sdf": sdf}).to_csv(tmp_path / "sdf.csv", index=False)
        pd.DataFrame(
            {"date": dates, "A": rets[:, 0], "B": rets[:, 1], "C": rets[:, 2]}
        ).to_csv(tmp_path / "assets.csv", index=False)
        out = tmp_path / "price.json"
        code = main(["price", "--sdf", str(tmp_path / "sdf.csv"),
                     "--assets", str(tmp_path / "assets.csv"), "--out", str(out)])
        assert code == 0
        report = read_json(out)
        assert {"rmse", "mape", "r2_ols", "r2_gls"} <= set(report)

    def test_sweep_mode_distribution(self, tmp_path):
        rng = np.random.default_rng(1)
        t_len = 50
        dates = [f"{2000 + i // 12:04d}-{i % 12 + 1:02d}" for i in range(t_len)]
        sdf = 1.0 + 0.1 * rng.standard_normal(t_len)
        pd.DataFrame({"date": dates, "sdf": sdf}).to_csv(tmp_path / "sdf.csv", index=False)
        sweep = tmp_path / "sweep"
        sweep.mkdir()
        for i in range(3):
            rets = rng.standard_normal((t_len, 3)) * 0.05 + 0.01
            pd.DataFrame({"date": dates, "A": rets[:, 0], "B": rets[:, 1],
                          "C": rets[:, 2]}).to_csv(sweep / f"cs{i}.csv", index=False)
        out = tmp_path / "sweep.json"
        code = main(["price", "--sdf", str(tmp_path / "sdf.csv"),
                     "--assets-dir", str(sweep), "--out", str(out)])
        assert code == 0
        payload = read_json(out)
        assert payload["distribution"]["n"] == 3
        assert len(payload["cross_sections"]) == 3

    def test_misaligned_dates_exit_code_2(self, tmp_path):
        dates = ["2000-01", "2000-02", "2000-03"]
        pd.DataFrame({"date": dates, "sdf": [1.0, 1.1, 0.9]}).to_csv(
            tmp_path / "sdf.csv", index=False)
        pd.DataFrame({"date": ["2000-02", "2000-03", "2000-04"],
                      "A": [0.1, 0.2, 0.3], "B": [0.0, 0.1, -0.1]}).to_csv(
            tmp_path / "assets.csv", index=False)
        code = main(["price", "--sdf", str(tmp_path / "sdf.csv"),
                     "--assets", str(tmp_path / "assets.csv"),
                     "--out", str(tmp_path / "o.json")])
        assert code == 2


class TestBenchmarkCmd:
    def test_gls_and_capm(self, panel_files, tmp_path):
        out = tmp_path / "b.json"
        code = main(["benchmark", "--returns", panel_files[0], "--factors", panel_files[1],
                     "--meta", panel_files[2], "--model", "gls",
                     "--factor-cols", "F0,F1", "--out", str(out)])
        assert code == 0
        payload = read_json(out)
        assert len(payload["lambda"]) == 3
        code = main(["benchmark", "--returns", panel_files[0], "--factors", panel_files[1],
                     "--meta", panel_files[2], "--model", "capm",
                     "--factor-cols", "F0,F1", "--out", str(out)])
        assert code == 1  # capm needs exactly one factor column

    def test_ridge_and_rppca(self, panel_files, tmp_path):
        out = tmp_path / "r.json"
        code = main(["benchmark", "--returns", panel_files[0], "--factors", panel_files[1],
                     "--meta", panel_files[2], "--model", "ridge",
                     "--shrinkages", "0.001,0.1", "--components", "1,2", "--out", str(out)])
        assert code == 0
        assert "selected" in read_json(out)
        code = main(["benchmark", "--returns", panel_files[0], "--factors", panel_files[1],
                     "--meta", panel_files[2], "--model", "rppca",
                     "--components", "2", "--out", str(out)])
        assert code == 0


class TestBacktestCmd:
    def test_ew_backtest(self, panel_files, tmp_path):
        out = tmp_path / "perf.json"
        code = main(["backtest", "--returns", panel_files[0], "--factors", panel_files[1],
                     "--meta", panel_files[2], "--initial-window", "60",
                     "--rebalance", "12", "--estimator", "ew", "--out", str(out)])
        assert code == 0
        payload = read_json(out)
        assert {"ann_mean_pct", "sharpe", "information_ratio"} <= set(payload["stats"])
        assert len(payload["oos_returns"]) == 100

    def test_bma_backtest_small(self, panel_files, tmp_path):
        out = tmp_path / "perf.json"
        code = main(["backtest", "--returns", panel_files[0], "--factors", panel_files[1],
                     "--meta", panel_files[2], "--initial-window", "100",
                     "--rebalance", "30", "--estimator", "bma", "--prior-sr", "0.6",
                     "--draws", "300", "--burn-in", "100", "--out", str(out)])
        assert code == 0


class TestDynamicsCmd:
    def _write_series(self, tmp_path, t_len=400):
        from scipy.signal import lfilter

        from zoosdf.dynamics import simulate_garch11

        rng = np.random.default_rng(3)
        eps = simulate_garch11(0.0004, 0.12, 0.8, t_len, rng)
        y = 1.0 + lfilter([1.0], [1.0, -0.6], eps)
        dates = [f"{1990 + i // 12:04d}-{i % 12 + 1:02d}" for i in range(t_len)]
        path = tmp_path / "sdf.csv"
        pd.DataFrame({"date": dates, "sdf": y}).to_csv(path, index=False)
        return path, dates

    def test_dynamics_report(self, tmp_path):
        path, _ = self._write_series(tmp_path)
        out = tmp_path / "dyn.json"
        code = main(["dynamics", "--input", str(path), "--arma-max", "2,1",
                     "--criterion", "BIC", "--lb-lags", "12", "--out", str(out)])
        assert code == 0
        payload = read_json(out)
        assert {"arma", "garch", "ljung_box"} <= set(payload)
        assert payload["ljung_box"]["series"]["p_value"] < 0.01  # AR(1) input

    def test_predict_report(self, tmp_path):
        path, dates = self._write_series(tmp_path)
        rng = np.random.default_rng(4)
        targets = pd.DataFrame({
            "date": dates,
            "X": 0.02 * rng.standard_normal(len(dates)),
            "Y": 0.02 * rng.standard_normal(len(dates)),
        })
        targets.to_csv(tmp_path / "targets.csv", index=False)
        out = tmp_path / "pred.json"
        code = main(["predict", "--input", str(path), "--targets",
                     str(tmp_path / "targets.csv"), "--horizon", "3",
                     "--hac-lags", "5", "--arma-max", "1,0", "--out", str(out)])
        assert code == 0
        payload = read_json(out)
        assert set(payload["targets"]) == {"X", "Y"}


class TestErrorHandling:
    def test_unknown_flag_exits_1(self):
        assert main(["estimate", "--nope"]) == 1

    def test_missing_file_exits_2(self, tmp_path):
        code = main(["estimate", "--returns", "missing.csv", "--factors", "missing.csv",
                     "--meta", "missing.csv", "--out", str(tmp_path / "o.json")])
        assert code == 2

    def test_json_errors_on_stderr(self, panel_files, tmp_path, capsys):
        code = main(["estimate", "--returns", "missing.csv", "--factors", panel_files[1],
                     "--meta", panel_files[2], "--json-errors",
                     "--out", str(tmp_path / "o.json")])
        assert code == 2
        err = capsys.readouterr().err
        payload = json.loads(err.strip().splitlines()[-1])
        assert payload["error"] == "data"

    def test_degenerate_column_exits_2(self, tmp_path):
        t_len = 30
        dates = [f"{2000 + i // 12:04d}-{i % 12 + 1:02d}" for i in range(t_len)]
        rng = np.random.default_rng(5)
        pd.DataFrame({"date": dates, "A": rng.standard_normal(t_len),
                      "B": np.full(t_len, 0.3)}).to_csv(tmp_path / "r.csv", index=False)
        pd.DataFrame({"date": dates, "F": rng.standard_normal(t_len)}).to_csv(
            tmp_path / "f.csv", index=False)
        pd.DataFrame({"name": ["F"], "tradable": [0], "asset_class": ["nontradable"],
                      "kappa_tilt": [0.0]}).to_csv(tmp_path / "m.csv", index=False)
        code = main(["estimate", "--returns", str(tmp_path / "r.csv"),
                     "--factors", str(tmp_path / "f.csv"), "--meta", str(tmp_path / "m.csv"),
                     "--out", str(tmp_path / "o.json")])
        assert code == 2
