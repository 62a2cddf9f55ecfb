"""Command-line interface: outputs, exit codes, determinism."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from enkbf import ExperimentConfig, GaussianPosterior, SchemeConfig, config_to_json, damped_rotation
from enkbf.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def invoke(runner, *args, **kwargs):
    return runner.invoke(main, list(args), **kwargs)


class TestHelp:
    @pytest.mark.parametrize("cmd", [
        [], ["simulate"], ["estimate"], ["moments"], ["estimate-drift"],
        ["subsample-scan"], ["experiment"],
    ])
    def test_help_exits_clean(self, runner, cmd):
        res = invoke(runner, *cmd, "--help")
        assert res.exit_code == 0
        assert "Usage" in res.output


class TestMoments:
    def test_benchmark_terminal_line(self, runner):
        res = invoke(runner, "moments", "--sigma0", "4", "--c", "1", "--T", "6")
        assert res.exit_code == 0
        assert res.output.strip() == "sigma_T=0.16 m_T=0.96 p_T=0.1536"

    def test_bias_rate_shifts_the_mean(self, runner):
        res = invoke(runner, "moments", "--sigma0", "4", "--c", "1", "--T", "6",
                     "--bias-rate", "-1.5")
        assert res.exit_code == 0
        assert "m_T=-0.48" in res.output

    def test_csv_output(self, runner, tmp_path):
        out = tmp_path / "moments.csv"
        res = invoke(runner, "moments", "--sigma0", "4", "--c", "1", "--T", "6",
                     "-o", str(out))
        assert res.exit_code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "t,m,p,sigma"
        assert len(lines) == 1 + 101

    def test_bad_grid_is_a_config_error(self, runner):
        res = invoke(runner, "moments", "--sigma0", "4", "--c", "1", "--T", "6",
                     "--dt", "0.07")
        assert res.exit_code == 3
        assert res.stderr.startswith("config-error:")


class TestSimulate:
    def test_csv_shape_and_determinism(self, runner):
        args = ("simulate", "--T", "1", "--dtau", "1e-3", "--seed", "3")
        res = invoke(runner, *args)
        assert res.exit_code == 0
        lines = res.output.splitlines()
        assert lines[0] == "t,x_1,x_2"
        assert len(lines) == 1 + 1001
        assert invoke(runner, *args).output == res.output

    def test_two_scale_and_filtered_variants_differ_from_reference(self, runner):
        base = invoke(runner, "simulate", "--T", "1", "--dtau", "1e-3", "--seed", "3")
        two = invoke(runner, "simulate", "--T", "1", "--dtau", "1e-3", "--seed", "3",
                     "--epsilon", "0.01")
        filt = invoke(runner, "simulate", "--T", "1", "--dtau", "1e-3", "--seed", "3",
                      "--filter-delta", "0.1")
        assert two.exit_code == 0 and filt.exit_code == 0
        assert two.output != base.output
        assert filt.output != base.output

    def test_unstable_step_is_a_config_error(self, runner):
        res = invoke(runner, "simulate", "--T", "1", "--dtau", "0.25")
        assert res.exit_code == 3

    def test_unwritable_output_is_an_io_error(self, runner):
        res = invoke(runner, "simulate", "--T", "1", "--dtau", "1e-3", "--seed", "3",
                     "-o", "/definitely-missing-dir/out.csv")
        assert res.exit_code == 5
        assert res.stderr.startswith("io-error:")


class TestEstimate:
    def test_trace_csv(self, runner):
        res = invoke(runner, "estimate", "--T", "6", "--dtau", "1e-3", "--seed", "7",
                     "--gain-mode", "stationary")
        assert res.exit_code == 0
        lines = res.output.splitlines()
        assert lines[0] == "t,mu,sigma"
        assert len(lines) == 1 + 101
        last = lines[-1].split(",")
        assert abs(float(last[2]) - 0.16) <= 0.01

    def test_corrected_variant_needs_two_scale_data(self, runner):
        res = invoke(runner, "estimate", "--variant", "highfreq_corrected",
                     "--T", "1.2", "--dtau", "1e-3")
        assert res.exit_code == 3
        assert "two-scale" in res.stderr
        ok = invoke(runner, "estimate", "--variant", "highfreq_corrected",
                    "--T", "1.2", "--dtau", "1e-3", "--epsilon", "0.01",
                    "--gain-mode", "stationary")
        assert ok.exit_code == 0

    def test_filtered_assimilation_requires_the_integral_family(self, runner):
        res = invoke(runner, "estimate", "--T", "1.2", "--dtau", "1e-3",
                     "--filter-delta", "0.1")
        assert res.exit_code == 3
        ok = invoke(runner, "estimate", "--T", "1.2", "--dtau", "1e-3",
                    "--filter-delta", "0.1", "--variant", "highfreq",
                    "--gain-mode", "stationary")
        assert ok.exit_code == 0

    def test_window_mismatch_is_a_config_error(self, runner):
        res = invoke(runner, "estimate", "--T", "6", "--dtau", "1e-3", "--dt", "0.07")
        assert res.exit_code == 3

    def test_variance_blowup_is_a_numeric_error(self, runner):
        res = invoke(runner, "estimate", "--variant", "highfreq", "--prior-var", "1000",
                     "--T", "1.2", "--dtau", "1e-3", "--seed", "0")
        assert res.exit_code == 4
        assert res.stderr.startswith("numeric-error:")


class TestEstimateDrift:
    def test_json_payload(self, runner):
        res = invoke(runner, "estimate-drift", "--paths", "5", "--T", "3",
                     "--dtau", "1e-3", "--seed", "4")
        assert res.exit_code == 0
        payload = json.loads(res.output)
        assert set(payload) == {"matrix", "stderr", "n_windows"}
        assert np.asarray(payload["matrix"]).shape == (2, 2)
        assert payload["n_windows"] == 250

    def test_too_few_windows(self, runner):
        res = invoke(runner, "estimate-drift", "--paths", "1", "--T", "0.54",
                     "--dtau", "1e-3")
        assert res.exit_code == 3


class TestSubsampleScan:
    def test_csv_output(self, runner):
        res = invoke(runner, "subsample-scan", "--dt-list", "0.02,0.06",
                     "--paths", "3", "--T", "6", "--dtau", "1e-3", "--seed", "2")
        assert res.exit_code == 0
        lines = res.output.splitlines()
        assert lines[0] == "delta_t,h,stderr"
        assert len(lines) == 3
        assert float(lines[1].split(",")[0]) == 0.02

    def test_unparseable_list(self, runner):
        res = invoke(runner, "subsample-scan", "--dt-list", "a,b", "--paths", "2",
                     "--T", "6", "--dtau", "1e-3")
        assert res.exit_code == 3
        assert "cannot parse" in res.stderr

    def test_too_few_windows(self, runner):
        res = invoke(runner, "subsample-scan", "--dt-list", "0.6", "--paths", "2",
                     "--T", "6", "--dtau", "1e-3")
        assert res.exit_code == 3


class TestExperiment:
    def test_single_scale_preset_is_deterministic(self, runner, tmp_path):
        args = ("experiment", "single-scale", "--trials", "20", "--seed", "7",
                "--dtau", "1e-3")
        a = invoke(runner, *args, "--outdir", str(tmp_path / "a"))
        b = invoke(runner, *args, "--outdir", str(tmp_path / "b"))
        assert a.exit_code == 0 and b.exit_code == 0
        assert "subsampled: m_T=" in a.output and "highfreq: m_T=" in a.output
        for name in ("subsampled.csv", "highfreq.csv", "trials.csv"):
            assert (tmp_path / "a" / "single-scale" / name).read_bytes() == (
                tmp_path / "b" / "single-scale" / name
            ).read_bytes()

    def test_outdir_from_environment(self, runner, tmp_path):
        res = invoke(
            runner, "experiment", "single-scale", "--trials", "4", "--seed", "7",
            "--dtau", "1e-3", env={"ENKBF_OUTDIR": str(tmp_path / "env")},
        )
        assert res.exit_code == 0
        assert (tmp_path / "env" / "single-scale" / "summary.json").exists()

    def test_filtered_preset_reports_both_sources(self, runner, tmp_path):
        res = invoke(runner, "experiment", "filtered", "--trials", "2",
                     "--dtau", "1e-3", "--outdir", str(tmp_path))
        assert res.exit_code == 0
        assert "reference: m_T=" in res.output
        assert "two-scale: m_T=" in res.output

    def test_custom_runs_from_config_file(self, runner, tmp_path):
        cfg = ExperimentConfig(
            model=damped_rotation(),
            schemes={"sub": SchemeConfig("subsampled", 0.06, 60, gain_mode="stationary")},
            prior=GaussianPosterior(0.0, 4.0),
            T=1.2, delta_tau=1e-3, n_trials=6, master_seed=11,
        )
        cfg_file = tmp_path / "exp.json"
        cfg_file.write_text(config_to_json(cfg))
        res = invoke(runner, "experiment", "custom", "--config", str(cfg_file),
                     "--outdir", str(tmp_path / "out"))
        assert res.exit_code == 0
        assert "sub: m_T=" in res.output
        assert (tmp_path / "out" / "custom" / "sub.csv").exists()

    def test_custom_requires_config_and_rejects_trials(self, runner, tmp_path):
        res = invoke(runner, "experiment", "custom")
        assert res.exit_code == 3
        assert "needs --config" in res.stderr
        cfg = ExperimentConfig(
            model=damped_rotation(),
            schemes={"sub": SchemeConfig("subsampled", 0.06, 60, gain_mode="stationary")},
            prior=GaussianPosterior(0.0, 4.0),
            T=1.2, delta_tau=1e-3, n_trials=6, master_seed=11,
        )
        cfg_file = tmp_path / "exp.json"
        cfg_file.write_text(config_to_json(cfg))
        res = invoke(runner, "experiment", "custom", "--config", str(cfg_file),
                     "--trials", "9")
        assert res.exit_code == 3
        assert "trial count from the config" in res.stderr

    def test_unknown_preset_is_a_usage_error(self, runner):
        res = invoke(runner, "experiment", "nope")
        assert res.exit_code == 2
