"""Experiment runners, results persistence and plot-data emission, exercised
at micro scale (tiny datasets, two stages, an epoch) so the full pipeline
runs in seconds."""

import json
import logging
from pathlib import Path

import numpy as np
import pytest

from unrollkd import (ConfigError, EmptyResultsError, FIGURES, RESULT_COLUMNS,
                      config_hash, emit_plot_data, preset, read_results,
                      run_distill_grid, run_sigma_sweep, training_config,
                      validate_config, write_results)
from unrollkd.experiments import (VARIANT_BASELINE, VARIANT_DISTILLED,
                                  VARIANT_PLAIN, VARIANT_TEACHER,
                                  resolve_data_dir)
from unrollkd.seeding import derive_seed


def micro_spc_cfg(out_dir, experiment="spc_sweep", **updates):
    cfg = preset(experiment)
    cfg["out_dir"] = str(out_dir)
    cfg["repetitions"] = 2
    cfg["sigma"] = [0.0, 0.5]
    cfg["dataset"].update(source="synthetic", train=30, val=10, test=10)
    cfg["network"].update(stages=2, channels=2)
    cfg["training"].update(epochs=1, batch_size=15, dtype="float64")
    cfg["evaluation"]["images"] = 6
    for key, val in updates.items():
        if isinstance(cfg.get(key), dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    validate_config(cfg)
    return cfg


def micro_mimo_cfg(out_dir, experiment="mimo_sweep", **updates):
    cfg = preset(experiment)
    cfg["out_dir"] = str(out_dir)
    cfg["repetitions"] = 1
    cfg["sigma"] = [0.0, 0.9]
    cfg["geometry"].update(tx=2, rx=4)
    cfg["network"].update(stages=2, hidden=8, aux=4)
    cfg["training"].update(iterations=4, batch_size=16, dtype="float64")
    cfg["measurement"]["snr_test"] = [7.0, 13.0]
    cfg["evaluation"].update(symbols=200, batch=100)
    for key, val in updates.items():
        if isinstance(cfg.get(key), dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    validate_config(cfg)
    return cfg


@pytest.fixture(scope="module")
def spc_sweep_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("spc-sweep")
    cfg = micro_spc_cfg(out)
    rows = run_sigma_sweep(cfg)
    csv_path, manifest_path = write_results(rows, cfg, verb="sweep-sigma")
    return cfg, rows, csv_path, manifest_path


@pytest.fixture(scope="module")
def mimo_sweep_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("mimo-sweep")
    cfg = micro_mimo_cfg(out)
    rows = run_sigma_sweep(cfg)
    csv_path, manifest_path = write_results(rows, cfg, verb="sweep-sigma")
    return cfg, rows, csv_path, manifest_path


class TestSigmaSweep:
    def test_row_inventory(self, spc_sweep_run):
        cfg, rows, _, _ = spc_sweep_run
        # 2 sigmas x 2 reps x 2 metrics
        assert len(rows) == 8
        assert {r["variant"] for r in rows} == {VARIANT_PLAIN}
        assert {r["metric"] for r in rows} == {"psnr", "ssim"}
        assert {r["sigma"] for r in rows} == {0.0, 0.5}
        assert all(r["sigma_t"] is None and r["snr_db"] is None for r in rows)
        assert {r["config_hash"] for r in rows} == {config_hash(cfg)}

    def test_repetition_seeds_are_derived(self, spc_sweep_run):
        cfg, rows, _, _ = spc_sweep_run
        for rep in (0, 1):
            seeds = {r["seed"] for r in rows if r["repetition"] == rep}
            assert seeds == {derive_seed(cfg["seed"], "rep", rep)}

    def test_metric_values_sane(self, spc_sweep_run):
        _, rows, _, _ = spc_sweep_run
        for r in rows:
            if r["metric"] == "psnr":
                assert 0.0 < r["value"] < 60.0
            else:
                assert -1.0 <= r["value"] <= 1.0

    def test_mimo_rows(self, mimo_sweep_run):
        cfg, rows, _, _ = mimo_sweep_run
        # 2 sigmas x 1 rep x 2 test SNRs
        assert len(rows) == 4
        assert {r["metric"] for r in rows} == {"ber"}
        assert {r["snr_db"] for r in rows} == {7.0, 13.0}
        assert all(0.0 <= r["value"] <= 0.5 for r in rows)

    def test_rejects_distill_experiment(self, tmp_path):
        cfg = micro_spc_cfg(tmp_path, experiment="spc_distill")
        with pytest.raises(ConfigError, match="sweep-sigma"):
            run_sigma_sweep(cfg)


class TestResultsPersistence:
    def test_csv_layout(self, spc_sweep_run):
        _, rows, csv_path, _ = spc_sweep_run
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == ",".join(RESULT_COLUMNS)
        assert len(lines) == 1 + len(rows)

    def test_read_results_roundtrip(self, spc_sweep_run):
        _, rows, csv_path, _ = spc_sweep_run
        back = read_results(csv_path)
        assert len(back) == len(rows)
        for orig, loaded in zip(rows, back):
            assert loaded["value"] == orig["value"]  # repr() round-trips floats
            assert loaded["sigma"] == orig["sigma"]
            assert loaded["sigma_t"] is None
            assert loaded["repetition"] == orig["repetition"]
            assert loaded["seed"] == orig["seed"]

    def test_append_only(self, tmp_path):
        cfg = micro_mimo_cfg(tmp_path)
        rows = run_sigma_sweep(cfg)
        write_results(rows, cfg)
        write_results(rows, cfg)
        lines = (tmp_path / "results.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 2 * len(rows)
        assert sum(1 for ln in lines if ln.startswith("config_hash")) == 1

    def test_manifest_contents(self, spc_sweep_run):
        cfg, rows, _, manifest_path = spc_sweep_run
        assert manifest_path.name == f"manifest-{config_hash(cfg)[:12]}.json"
        manifest = json.loads(manifest_path.read_text())
        assert manifest["verb"] == "sweep-sigma"
        assert manifest["config_hash"] == config_hash(cfg)
        assert manifest["config"] == cfg
        assert manifest["rows_written"] == len(rows)
        assert manifest["repetition_seeds"] == [
            derive_seed(cfg["seed"], "rep", r) for r in range(cfg["repetitions"])]
        for key in ("git_revision", "package_version", "python", "torch",
                    "numpy", "created_unix"):
            assert key in manifest

    def test_empty_rows_rejected(self, tmp_path):
        cfg = micro_spc_cfg(tmp_path)
        with pytest.raises(EmptyResultsError):
            write_results([], cfg)

    def test_read_results_rejects_foreign_csv(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(EmptyResultsError, match="missing columns"):
            read_results(path)

    def test_reruns_are_byte_identical_excluding_wall_clock(self, tmp_path):
        def strip_wall(path):
            lines = path.read_text().strip().splitlines()
            return "\n".join(ln.rsplit(",", 1)[0] for ln in lines)

        cfg_a = micro_mimo_cfg(tmp_path / "a")
        write_results(run_sigma_sweep(cfg_a), cfg_a)
        cfg_b = micro_mimo_cfg(tmp_path / "b")
        cfg_b["out_dir"] = str(tmp_path / "b")
        write_results(run_sigma_sweep(cfg_b), cfg_b)
        a = strip_wall(tmp_path / "a" / "results.csv")
        b = strip_wall(tmp_path / "b" / "results.csv")
        # out_dir differs, so the config hash column differs; blank it too
        a_rows = [ln.split(",", 1)[1] for ln in a.splitlines()[1:]]
        b_rows = [ln.split(",", 1)[1] for ln in b.splitlines()[1:]]
        assert a_rows == b_rows


@pytest.fixture(scope="module")
def spc_grid_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("spc-grid")
    cfg = micro_spc_cfg(out, experiment="spc_distill", repetitions=1,
                        sigma=[0.5], sigma_t=[0.0, 0.5])
    rows = run_distill_grid(cfg)
    write_results(rows, cfg, verb="distill-grid")
    return cfg, rows, Path(cfg["out_dir"]) / "results.csv"


class TestDistillGrid:
    def test_variant_inventory(self, spc_grid_run):
        _, rows, _ = spc_grid_run
        by_variant = {}
        for r in rows:
            by_variant.setdefault(r["variant"], []).append(r)
        # teachers for both sigma_t, one baseline, one admissible student
        assert len(by_variant[VARIANT_TEACHER]) == 4
        assert len(by_variant[VARIANT_BASELINE]) == 2
        assert len(by_variant[VARIANT_DISTILLED]) == 2
        teacher_cells = {(r["sigma"], r["sigma_t"])
                         for r in by_variant[VARIANT_TEACHER]}
        assert teacher_cells == {(0.0, 0.0), (0.5, 0.5)}
        assert all(r["sigma_t"] is None for r in by_variant[VARIANT_BASELINE])
        assert {(r["sigma"], r["sigma_t"])
                for r in by_variant[VARIANT_DISTILLED]} == {(0.5, 0.0)}

    def test_inadmissible_pair_warns(self, tmp_path, caplog):
        cfg = micro_spc_cfg(tmp_path, experiment="spc_distill", repetitions=1,
                            sigma=[0.5], sigma_t=[0.0, 0.5])
        with caplog.at_level(logging.WARNING, logger="unrollkd.experiments"):
            run_distill_grid(cfg)
        assert any("skipping teacher" in rec.message for rec in caplog.records)

    def test_students_share_seed_within_rep(self, spc_grid_run):
        _, rows, _ = spc_grid_run
        seeds = {r["seed"] for r in rows
                 if r["variant"] in (VARIANT_BASELINE, VARIANT_DISTILLED)}
        assert len(seeds) == 1

    def test_zero_lambda_distilled_equals_baseline(self, tmp_path):
        cfg = micro_spc_cfg(tmp_path, experiment="spc_distill", repetitions=1,
                            sigma=[0.5], sigma_t=[0.0],
                            training={"epochs": 1, "batch_size": 15,
                                      "dtype": "float64", "lambda_grad": 0.0,
                                      "lambda_o": 0.0})
        rows = run_distill_grid(cfg)
        base = {r["metric"]: r["value"] for r in rows
                if r["variant"] == VARIANT_BASELINE}
        dist = {r["metric"]: r["value"] for r in rows
                if r["variant"] == VARIANT_DISTILLED}
        assert base == dist

    def test_rejects_sweep_experiment(self, tmp_path):
        cfg = micro_spc_cfg(tmp_path)
        with pytest.raises(ConfigError, match="distill-grid"):
            run_distill_grid(cfg)

    def test_mimo_grid_smoke(self, tmp_path):
        cfg = micro_mimo_cfg(tmp_path, experiment="mimo_distill",
                             sigma=[0.9], sigma_t=[0.0])
        rows = run_distill_grid(cfg)
        variants = {r["variant"] for r in rows}
        assert variants == {VARIANT_TEACHER, VARIANT_BASELINE, VARIANT_DISTILLED}
        assert all(r["metric"] == "ber" for r in rows)


class TestTrainingConfig:
    def test_baseline_has_zero_lambdas(self, tmp_path):
        cfg = micro_spc_cfg(tmp_path, experiment="spc_distill")
        tcfg = training_config(cfg, 0.5, 0.0, seed=7, distill=False)
        assert tcfg.lambda_grad == 0.0 and tcfg.lambda_o == 0.0
        assert tcfg.network == "admm"
        assert tcfg.sigma == 0.5 and tcfg.seed == 7

    def test_distill_inherits_lambdas(self, tmp_path):
        cfg = micro_spc_cfg(tmp_path, experiment="spc_distill",
                            training={"lambda_grad": 2e-3, "lambda_o": 3e-3})
        tcfg = training_config(cfg, 0.5, 0.1, seed=7, distill=True)
        assert tcfg.lambda_grad == 2e-3 and tcfg.lambda_o == 3e-3
        assert tcfg.sigma_t == 0.1

    def test_mimo_maps_to_detnet(self, tmp_path):
        cfg = micro_mimo_cfg(tmp_path)
        tcfg = training_config(cfg, 0.5, 0.0, seed=7, distill=False)
        assert tcfg.network == "detnet"
        assert tcfg.stages == cfg["network"]["stages"]

    def test_resolve_data_dir(self, tmp_path, monkeypatch):
        cfg = micro_spc_cfg(tmp_path)
        monkeypatch.delenv("UNROLL_DATA_DIR", raising=False)
        assert resolve_data_dir(cfg) is None
        monkeypatch.setenv("UNROLL_DATA_DIR", "/from/env")
        assert resolve_data_dir(cfg) == "/from/env"
        cfg["dataset"]["data_dir"] = "/from/cfg"
        assert resolve_data_dir(cfg) == "/from/cfg"


class TestPlotData:
    def test_sweep_psnr_files(self, spc_sweep_run, tmp_path):
        cfg, rows, csv_path, _ = spc_sweep_run
        paths = emit_plot_data(csv_path, "sweep-psnr", tmp_path, cfg=cfg)
        named = {p.name: p for p in paths}
        assert set(named) == {"sweep-psnr.csv", "sweep-psnr.dat",
                              "sweep-psnr.schema.txt"}
        lines = named["sweep-psnr.csv"].read_text().strip().splitlines()
        assert lines[0] == "series,x,mean,std,n"
        cells = [ln.split(",") for ln in lines[1:]]
        assert [c[0] for c in cells] == ["plain", "plain"]
        assert [float(c[1]) for c in cells] == [0.0, 0.5]
        assert all(int(c[4]) == 2 for c in cells)
        # aggregate equals the mean over repetitions
        psnr0 = [r["value"] for r in rows
                 if r["metric"] == "psnr" and r["sigma"] == 0.0]
        assert float(cells[0][2]) == pytest.approx(np.mean(psnr0), rel=1e-12)

    def test_dat_blocks(self, mimo_sweep_run, tmp_path):
        cfg, _, csv_path, _ = mimo_sweep_run
        paths = emit_plot_data(csv_path, "sweep-ber", tmp_path, cfg=cfg)
        dat = paths[1].read_text()
        assert "# series: snr=7\n" in dat
        assert "# series: snr=13\n" in dat
        assert "\n\n\n" in dat  # blocks separated by two blank lines
        schema = paths[2].read_text()
        assert "logarithmic y axis" in schema

    def test_distill_series_naming(self, spc_grid_run, tmp_path):
        cfg, _, csv_path = spc_grid_run
        paths = emit_plot_data(csv_path, "distill-psnr", tmp_path, cfg=cfg)
        series = {ln.split(",")[0]
                  for ln in paths[0].read_text().strip().splitlines()[1:]}
        assert VARIANT_BASELINE in series
        assert f"{VARIANT_DISTILLED} sigma_t=0" in series
        assert any(s.startswith(VARIANT_TEACHER) for s in series)

    def test_no_matching_rows_raises_and_writes_nothing(self, spc_sweep_run,
                                                        tmp_path):
        _, _, csv_path, _ = spc_sweep_run
        out = tmp_path / "empty-out"
        with pytest.raises(EmptyResultsError):
            emit_plot_data(csv_path, "sweep-ber", out)
        assert not out.exists() or not list(out.iterdir())

    def test_partial_data_warns(self, spc_sweep_run, tmp_path, caplog):
        cfg, _, csv_path, _ = spc_sweep_run
        promising = dict(cfg, sigma=[0.0, 0.5, 0.9])
        with caplog.at_level(logging.WARNING, logger="unrollkd.experiments"):
            emit_plot_data(csv_path, "sweep-psnr", tmp_path / "p", cfg=promising)
        assert any("partial data" in rec.message and "0.9" in rec.message
                   for rec in caplog.records)

    def test_unknown_figure(self, spc_sweep_run, tmp_path):
        _, _, csv_path, _ = spc_sweep_run
        with pytest.raises(ConfigError, match="unknown figure"):
            emit_plot_data(csv_path, "sweep-mse", tmp_path)

    def test_figures_cover_all_experiments(self):
        assert {spec[0] for spec in FIGURES.values()} == {
            "spc_sweep", "spc_distill", "mimo_sweep", "mimo_distill"}
