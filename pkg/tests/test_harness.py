"""Config parsing, sweep aggregation, determinism, reports and the CLI."""

import csv
import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from greeks_dk import ConfigurationError, Payoff
from greeks_dk.cli import main as cli_main
from greeks_dk.harness import (
    SweepResult,
    clt_check,
    load_config,
    run_single,
    run_sweep,
)
from greeks_dk.reports import emit_reports
from greeks_dk.streams import mix_seed

TINY = {
    "lambda0": 100.0,
    "model": {"type": "black_scholes", "r": 0.05, "sigma": 0.2, "T": 1.0},
    "payoff": {"type": "put", "strike": 100.0},
    "ell": {"profile": "epanechnikov_product", "radius": 0.75},
    "kernel_K": {"name": "epanechnikov", "order": 2},
    "kernel_H": {"name": "epanechnikov", "order": 2, "scale": 5.0},
    "estimator": {"delta": "auto", "binning": {"enabled": True}},
    "bandwidth": {"method": "analytic", "gamma": 0.6},
    "baseline": {"epsilon": 1.0, "scheme": "central", "common_randoms": True},
    "sweep": {"Ns": [500, 1000, 2000, 4000], "replications": 3, "seeds": 999},
    "run": {"n_draws": 4000},
}


def tiny_config(**overrides):
    raw = json.loads(json.dumps(TINY))
    for key, val in overrides.items():
        raw[key] = val
    return load_config(raw)


class TestLoadConfig:
    def test_defaults_fill_in(self):
        cfg = load_config({"sweep": {"Ns": [100, 200, 300, 400]}})
        assert cfg.model.r == 0.05
        assert cfg.payoff_kind == "put"
        assert cfg.kernel_K.order == 2

    def test_json_path_roundtrip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(TINY))
        cfg = load_config(path)
        assert cfg.sweep_ns == [500, 1000, 2000, 4000]

    def test_nonincreasing_ns_rejected(self):
        with pytest.raises(ConfigurationError):
            tiny_config(sweep={"Ns": [1000, 500], "replications": 1, "seeds": 1})

    def test_bad_profile_rejected(self):
        with pytest.raises(ConfigurationError):
            tiny_config(ell={"profile": "gaussian_product", "radius": 0.5})

    def test_euler_custom_needs_api(self):
        with pytest.raises(ConfigurationError):
            tiny_config(model={"type": "euler_custom"})

    def test_match_kernel_mode(self):
        cfg = tiny_config(
            ell={"profile": "cosine_product", "radius": 0.5, "match_kernel": True},
            kernel_K={"name": "triweight", "order": 2},
        )
        assert cfg.ell_profile == "triweight_product"

    def test_shipped_reference_configs_parse(self):
        root = Path(__file__).resolve().parents[1] / "configs"
        for name in ("bs_put_single", "reference_sweep", "reference_clt", "oracle_wide"):
            cfg = load_config(root / f"{name}.json")
            assert cfg.kernel_K.dimension == 1

    def test_coupled_radius_resolution(self):
        cfg = tiny_config(ell={"profile": "epanechnikov_product", "radius": 0.75,
                               "couple_radius_to_h": True})
        assert cfg.ell_for(0.123).radius == 0.123

    def test_auto_radius_resolution(self):
        cfg = tiny_config(
            ell={"profile": "epanechnikov_product"},
            bandwidth={"method": "fixed", "h": 0.2},
        )
        assert cfg.ell_for(0.2).radius == pytest.approx(5.0 * 0.2)


class TestRunSingle:
    def test_all_estimators_present(self):
        cfg = tiny_config()
        res = run_single(cfg, 4000, mix_seed(999, 4000, 0))
        for name in ("beta_tilde", "beta_bar_oracle", "lr", "pathwise", "fd"):
            assert name in res
        assert res["errors"] == {}

    def test_deterministic_linear_model_cell(self):
        # degenerate smoke case: deterministic state, linear payoff
        class LinearModel:
            param_dim = 1
            state_dim = 1
            has_density = False
            has_score = False
            has_true_greek = False
            has_tangent = False

            def simulate_batch(self, lams, rng):
                rng.standard_normal(lams.shape[0])
                return np.asarray(lams, dtype=float).copy()

        cfg = tiny_config(bandwidth={"method": "fixed", "h": 0.4})
        cfg.model = LinearModel()
        cfg.payoff = Payoff(
            evaluate=lambda z: np.asarray(z)[..., 0] * 1.0,
            support_box=np.array([[-1e9, 1e9]]),
            continuous=True,
            derivative=lambda z: np.ones(np.asarray(z).shape[:-1])[..., None],
            name="linear",
        )
        res = run_single(cfg, 1000, 12)
        assert res["fd"].beta_hat[0] == pytest.approx(1.0, abs=1e-12)
        assert np.isfinite(res["beta_tilde"].beta_hat[0])


@pytest.fixture(scope="module")
def sweep():
    return run_sweep(tiny_config(), threads=2)


class TestRunSweep:
    def test_row_and_aggregate_shape(self, sweep):
        ns = {r["N"] for r in sweep.rows}
        assert ns == {500, 1000, 2000, 4000}
        names = {a["estimator"] for a in sweep.aggregates}
        assert names == {"beta_tilde", "beta_bar_oracle", "fd", "lr", "pathwise"}
        assert len(sweep.aggregates) == 5 * 4

    def test_mse_identity(self, sweep):
        # MSE = bias^2 + variance holds exactly for the moment definitions used
        for agg in sweep.aggregates:
            assert agg["mse"] == pytest.approx(
                agg["bias"] ** 2 + agg["variance"], abs=1e-12 * max(agg["mse"], 1.0)
            )

    def test_slopes_present(self, sweep):
        assert "beta_tilde" in sweep.slopes
        assert np.isfinite(sweep.slopes["beta_tilde"]["slope"])

    def test_pivot_columns(self, sweep):
        for agg in sweep.aggregates:
            assert np.isfinite(agg["pivot_mean"])

    def test_thread_count_does_not_change_results(self, sweep):
        again = run_sweep(tiny_config(), threads=1)
        a = sorted((r["estimator"], r["N"], r["rep"], r["estimate"][0]) for r in sweep.rows)
        b = sorted((r["estimator"], r["N"], r["rep"], r["estimate"][0]) for r in again.rows)
        assert a == b

    def test_emit_reports_files(self, sweep, tmp_path):
        paths = emit_reports(sweep, tmp_path / "out")
        names = {p.name for p in paths}
        assert {"sweep.csv", "aggregate.csv", "run.json", "mse_loglog.png",
                "variance_scaling.png"} <= names
        with (tmp_path / "out" / "sweep.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["estimator", "N", "rep", "seed", "h", "estimate", "se"]
        assert len(rows) == 1 + len(sweep.rows)
        with (tmp_path / "out" / "aggregate.csv").open() as fh:
            agg_rows = list(csv.reader(fh))
        assert len(agg_rows) == 1 + 5 * 4
        payload = json.loads((tmp_path / "out" / "run.json").read_text())
        assert payload["beta_true"] == pytest.approx(-0.3631693, abs=1e-6)
        dat = (tmp_path / "out" / "mse_loglog_beta_tilde.dat").read_text().splitlines()
        assert dat[0].startswith("# N mse")
        assert len(dat) == 1 + 4

    def test_rerun_byte_identical(self, tmp_path):
        cfg = tiny_config()
        emit_reports(run_sweep(cfg, threads=1), tmp_path / "a", figures=False)
        emit_reports(run_sweep(tiny_config(), threads=3), tmp_path / "b", figures=False)
        for name in ("sweep.csv", "aggregate.csv", "run.json"):
            assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)

    def test_empty_rows_header_only(self, tmp_path):
        empty = SweepResult(
            rows=[], aggregates=[], slopes={}, h_by_n={}, beta_true=None,
            base_seed=0, config_echo={}, failed_cells=0, total_cells=0,
        )
        paths = emit_reports(empty, tmp_path / "empty", figures=False)
        with (tmp_path / "empty" / "sweep.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1
        assert {p.name for p in paths} == {"sweep.csv", "aggregate.csv", "run.json"}


class TestCoupledRadius:
    def test_mse_improves_with_n(self):
        # exploratory mode: radius tied to the bandwidth; only monotone MSE
        # improvement is claimed, never a rate
        cfg = tiny_config(
            ell={"profile": "epanechnikov_product", "radius": 0.75, "couple_radius_to_h": True},
            sweep={"Ns": [1000, 2000, 4000, 8000], "replications": 6, "seeds": 31},
        )
        sweep = run_sweep(cfg, threads=2)
        mses = [a["mse"] for a in sweep.aggregates if a["estimator"] == "beta_tilde"]
        assert mses[-1] < mses[0]


class TestCltCheck:
    def test_replication_floor(self):
        with pytest.raises(ValueError):
            clt_check(tiny_config(), 1000, 0.3, replications=10)

    def test_needs_true_greek(self):
        cfg = tiny_config(model={"type": "euler_gbm", "r": 0.05, "sigma": 0.2, "T": 1.0,
                                 "steps": 8})
        with pytest.raises(ConfigurationError):
            clt_check(cfg, 1000, 0.3, replications=200)


class TestCltFigure:
    def test_render_clt_figure(self, tmp_path):
        from greeks_dk.reports import render_clt_figure

        rng = np.random.default_rng(1)
        stats_dict = {"pivot_mean": 0.01, "pivot_var": 1.02, "pass": True}
        path = render_clt_figure(rng.standard_normal(200), stats_dict, tmp_path)
        assert path.exists() and path.stat().st_size > 0


class TestCli:
    def test_clt_replication_floor_is_a_clean_error(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(TINY))
        assert cli_main(["clt", str(cfg_path), "--reps", "10"]) == 2
        assert "error:" in capsys.readouterr().err

    def test_kernels_verify(self, capsys):
        assert cli_main(["kernels", "verify", "epanechnikov", "2"]) == 0
        assert "verified order 2" in capsys.readouterr().out
        assert cli_main(["kernels", "verify", "quartic", "4"]) == 0

    def test_run_and_sweep_commands(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        raw = json.loads(json.dumps(TINY))
        raw["outputs"] = str(tmp_path / "out")
        cfg_path.write_text(json.dumps(raw))
        assert cli_main(["run", str(cfg_path)]) == 0
        assert (tmp_path / "out" / "run_report.json").exists()
        assert cli_main(["sweep", str(cfg_path), "--threads", "2"]) == 0
        assert (tmp_path / "out" / "sweep.csv").exists()
        assert (tmp_path / "out" / "mse_loglog.png").exists()
        out = capsys.readouterr().out
        assert "slope" in out

    def test_seed_override_changes_output(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        raw = json.loads(json.dumps(TINY))
        raw["sweep"]["Ns"] = [500, 1000, 1500, 2000]
        raw["sweep"]["replications"] = 1
        raw["outputs"] = str(tmp_path / "o1")
        cfg_path.write_text(json.dumps(raw))
        assert cli_main(["sweep", str(cfg_path), "--no-figures"]) == 0
        assert cli_main(["sweep", str(cfg_path), "--seed", "31337", "--out",
                         str(tmp_path / "o2"), "--no-figures"]) == 0
        assert not filecmp.cmp(tmp_path / "o1" / "sweep.csv", tmp_path / "o2" / "sweep.csv",
                               shallow=False)
