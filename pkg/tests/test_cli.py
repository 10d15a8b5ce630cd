"""End-to-end command-line tests driving main() with micro-scale configs."""

import numpy as np
import pytest
import yaml

from unrollkd import SensingOperator, read_results, save_operator
from unrollkd.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_TRAINING, main


def write_cfg(path, experiment, **extra):
    if experiment.startswith("spc"):
        cfg = {
            "experiment": experiment,
            "repetitions": 1,
            "sigma": [0.5],
            "dataset": {"source": "synthetic", "train": 30, "val": 10,
                        "test": 10},
            "network": {"stages": 2, "channels": 2},
            "training": {"epochs": 1, "batch_size": 15, "dtype": "float64"},
            "evaluation": {"images": 4},
        }
    else:
        cfg = {
            "experiment": experiment,
            "repetitions": 1,
            "sigma": [0.9],
            "geometry": {"tx": 2, "rx": 4},
            "network": {"stages": 2, "hidden": 8, "aux": 4},
            "training": {"iterations": 3, "batch_size": 16,
                         "dtype": "float64"},
            "measurement": {"snr_test": [7.0, 13.0]},
            "evaluation": {"symbols": 200, "batch": 100},
        }
    if experiment.endswith("_distill"):
        cfg["sigma_t"] = [0.0]
    cfg.update(extra)
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestParsing:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == EXIT_OK
        assert "sweep-sigma" in capsys.readouterr().out

    def test_missing_verb_is_usage_error(self, capsys):
        assert main([]) == EXIT_CONFIG

    def test_unknown_verb_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == EXIT_CONFIG

    def test_unknown_figure_is_usage_error(self, capsys):
        assert main(["plot-data", "--figure", "sweep-mse"]) == EXIT_CONFIG


class TestSweepVerb:
    def test_spc_sweep_writes_results(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path / "run.yaml", "spc_sweep")
        code = main(["sweep-sigma", "--config", str(cfg_path),
                     "--out", str(tmp_path / "out")])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "wrote 2 rows" in out
        assert (tmp_path / "out" / "results.csv").exists()
        rows = read_results(tmp_path / "out" / "results.csv")
        assert {r["metric"] for r in rows} == {"psnr", "ssim"}

    def test_seed_override_lands_in_manifest(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path / "run.yaml", "mimo_sweep")
        code = main(["sweep-sigma", "--config", str(cfg_path),
                     "--out", str(tmp_path / "out"), "--seed", "7"])
        assert code == EXIT_OK
        manifest = next((tmp_path / "out").glob("manifest-*.json"))
        assert '"seed": 7' in manifest.read_text()

    def test_invalid_config_exits_two(self, tmp_path, capsys):
        cfg_path = tmp_path / "run.yaml"
        cfg_path.write_text(yaml.safe_dump(
            {"experiment": "spc_sweep", "training": {"epohcs": 1}}))
        code = main(["sweep-sigma", "--config", str(cfg_path)])
        assert code == EXIT_CONFIG
        assert "error:" in capsys.readouterr().err

    def test_missing_config_file_exits_four(self, tmp_path, capsys):
        code = main(["sweep-sigma", "--config", str(tmp_path / "absent.yaml")])
        assert code == EXIT_IO


class TestGridVerb:
    def test_mimo_grid(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path / "run.yaml", "mimo_distill")
        code = main(["distill-grid", "--config", str(cfg_path),
                     "--out", str(tmp_path / "out")])
        assert code == EXIT_OK
        rows = read_results(tmp_path / "out" / "results.csv")
        assert {r["variant"] for r in rows} == {
            "teacher", "student_baseline", "student_distilled"}


@pytest.fixture(scope="module")
def spc_artifacts(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("teach-spc")
    cfg_path = write_cfg(tmp / "run.yaml", "spc_distill")
    code = main(["train-teacher", "--config", str(cfg_path),
                 "--out", str(tmp / "out"), "--sigma-t", "0"])
    assert code == EXIT_OK
    return cfg_path, tmp / "out"


class TestTeacherAndEval:
    def test_teacher_artifacts_exist(self, spc_artifacts, capsys):
        _, out = spc_artifacts
        assert (out / "teacher-admm-st0.params").exists()
        assert (out / "teacher-admm-st0.op").exists()
        log = (out / "teacher-admm-st0-train-log.csv").read_text()
        assert log.startswith("step,epoch,recon_loss")

    def test_eval_roundtrip(self, spc_artifacts, capsys):
        cfg_path, out = spc_artifacts
        code = main(["eval", "--config", str(cfg_path),
                     "--out", str(out),
                     "--params", str(out / "teacher-admm-st0.params"),
                     "--operator", str(out / "teacher-admm-st0.op")])
        stdout = capsys.readouterr().out
        assert code == EXIT_OK
        assert "psnr" in stdout and "ssim" in stdout
        rows = read_results(out / "results.csv")
        assert {r["variant"] for r in rows} == {"eval"}

    def test_eval_detnet_roundtrip(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path / "run.yaml", "mimo_distill")
        out = tmp_path / "out"
        assert main(["train-teacher", "--config", str(cfg_path),
                     "--out", str(out)]) == EXIT_OK
        code = main(["eval", "--config", str(cfg_path), "--out", str(out),
                     "--params", str(out / "teacher-detnet-st0.params"),
                     "--operator", str(out / "teacher-detnet-st0.op")])
        stdout = capsys.readouterr().out
        assert code == EXIT_OK
        assert "ber" in stdout

    def test_eval_rejects_unknown_container(self, tmp_path, capsys):
        blob = tmp_path / "params.bin"
        blob.write_bytes(b"JUNKDATA")
        code = main(["eval", "--params", str(blob),
                     "--operator", str(blob)])
        assert code == EXIT_IO
        assert "file format error" in capsys.readouterr().err

    def test_eval_rejects_mismatched_operator(self, spc_artifacts, tmp_path,
                                              capsys):
        cfg_path, out = spc_artifacts
        rng = np.random.default_rng(0)
        small = SensingOperator(known=rng.standard_normal((4, 16)),
                                unknown=np.zeros((4, 16)), sigma=0.0, seed=0)
        op_path = tmp_path / "small.op"
        save_operator(small, op_path)
        code = main(["eval", "--config", str(cfg_path), "--out", str(out),
                     "--params", str(out / "teacher-admm-st0.params"),
                     "--operator", str(op_path)])
        assert code == EXIT_CONFIG
        assert "error:" in capsys.readouterr().err

    def test_train_teacher_without_sigma_t(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path / "run.yaml", "spc_sweep")
        code = main(["train-teacher", "--config", str(cfg_path),
                     "--out", str(tmp_path / "out")])
        assert code == EXIT_CONFIG
        assert "sigma-t" in capsys.readouterr().err


class TestPlotDataVerb:
    def test_plot_data_files(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path / "run.yaml", "mimo_sweep")
        out = tmp_path / "out"
        assert main(["sweep-sigma", "--config", str(cfg_path),
                     "--out", str(out)]) == EXIT_OK
        code = main(["plot-data", "--figure", "sweep-ber",
                     "--results", str(out / "results.csv"),
                     "--out", str(out)])
        assert code == EXIT_OK
        for suffix in (".csv", ".dat", ".schema.txt"):
            assert (out / f"sweep-ber{suffix}").exists()

    def test_plot_data_no_rows_exits_two(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path / "run.yaml", "mimo_sweep")
        out = tmp_path / "out"
        assert main(["sweep-sigma", "--config", str(cfg_path),
                     "--out", str(out)]) == EXIT_OK
        code = main(["plot-data", "--figure", "sweep-psnr",
                     "--results", str(out / "results.csv"),
                     "--out", str(out)])
        assert code == EXIT_CONFIG

    def test_plot_data_missing_results_exits_four(self, tmp_path, capsys):
        code = main(["plot-data", "--figure", "sweep-psnr",
                     "--results", str(tmp_path / "none.csv"),
                     "--out", str(tmp_path)])
        assert code == EXIT_IO


class TestVerifyGradientsVerb:
    def test_linear_passes(self, capsys):
        code = main(["verify-gradients", "--network", "linear",
                     "--loss", "recon"])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert out.startswith("PASS linear")

    def test_failure_exits_three(self, monkeypatch, capsys):
        import unrollkd.cli as cli_mod

        def fake_verify(network="admm", loss="composite"):
            return {"network": network, "loss": loss, "param_count": 1,
                    "max_rel_err": 1.0, "mean_rel_err": 1.0, "elapsed_s": 0.0}

        monkeypatch.setattr(cli_mod, "verify_gradients", fake_verify)
        code = main(["verify-gradients", "--network", "admm"])
        captured = capsys.readouterr()
        assert code == EXIT_TRAINING
        assert "FAIL" in captured.out
        assert "failed" in captured.err
