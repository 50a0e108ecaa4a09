"""End-to-end tests of the ``wbanm`` command line.

Each command runs through :class:`click.testing.CliRunner` against small
synthetic inputs; assertions cover the exit-code contract (0 success,
1 failed check, 2 unusable input, 3 failed computation), the files written
beside the primary outputs, and idempotence under identical inputs.
"""

from __future__ import annotations

import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from wbanm.cli import main
from wbanm.model import load_data_matrix

pytestmark = pytest.mark.filterwarnings("ignore::DeprecationWarning")


SCENARIO = {
    "array": {"n_sensors": 8, "spacing_m": 1.7},
    "freqs": {"multipliers": [1, 2, 3]},
    "sources": [
        {
            "theta_deg": 70.0,
            "amplitude": [
                {"re": 0.6, "im": 0.0},
                {"re": 0.0, "im": 0.5},
                {"re": -0.4, "im": 0.2},
            ],
        },
        {
            "theta_deg": 110.0,
            "amplitude": [
                {"re": 0.3, "im": 0.3},
                {"re": 0.5, "im": 0.0},
                {"re": 0.2, "im": -0.6},
            ],
        },
    ],
    "snr_db": None,
    "seed": 7,
}

EST_CONFIG = {"k": 2, "array": {"n_sensors": 8, "spacing_m": 1.7}, "variant": "fast"}


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def workdir(tmp_path):
    old = os.getcwd()
    os.chdir(tmp_path)
    yield tmp_path
    os.chdir(old)


def write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


@pytest.fixture()
def data_csv(runner, workdir):
    write_json("scen.json", SCENARIO)
    result = runner.invoke(main, ["simulate", "--scenario", "scen.json", "--out", "data.csv"])
    assert result.exit_code == 0, result.output
    return "data.csv"


class TestSimulate:
    def test_writes_csv_and_scenario_echo(self, runner, workdir):
        write_json("scen.json", SCENARIO)
        result = runner.invoke(main, ["simulate", "--scenario", "scen.json", "--out", "data.csv"])
        assert result.exit_code == 0, result.output
        assert os.path.exists("data.csv")
        assert os.path.exists("data_scenario.json")
        y, mult = load_data_matrix("data.csv")
        assert y.shape == (8, 3)
        assert mult == (1, 2, 3)
        with open("data_scenario.json") as fh:
            echo = json.load(fh)
        assert echo["array"]["n_sensors"] == 8
        assert echo["array"]["speed_mps"] == 340.0  # defaults resolved
        assert echo["freqs"]["multipliers"] == [1, 2, 3]

    def test_same_seed_identical_files(self, runner, workdir):
        scen = dict(SCENARIO, snr_db=10.0)
        write_json("scen.json", scen)
        for name in ("a.csv", "b.csv"):
            result = runner.invoke(
                main, ["simulate", "--scenario", "scen.json", "--out", name, "--seed", "42"]
            )
            assert result.exit_code == 0, result.output
        with open("a.csv") as fa, open("b.csv") as fb:
            assert fa.read() == fb.read()

    def test_seed_flag_changes_noise(self, runner, workdir):
        scen = dict(SCENARIO, snr_db=10.0)
        write_json("scen.json", scen)
        runner.invoke(main, ["simulate", "--scenario", "scen.json", "--out", "a.csv", "--seed", "1"])
        runner.invoke(main, ["simulate", "--scenario", "scen.json", "--out", "b.csv", "--seed", "2"])
        ya, _ = load_data_matrix("a.csv")
        yb, _ = load_data_matrix("b.csv")
        assert not np.allclose(ya, yb)
        # the echoed scenario records the overriding seed
        with open("a_scenario.json") as fh:
            assert json.load(fh)["seed"] == 1

    def test_noise_free_reproduces_signal_exactly(self, runner, workdir):
        write_json("scen.json", SCENARIO)
        runner.invoke(main, ["simulate", "--scenario", "scen.json", "--out", "a.csv", "--seed", "1"])
        runner.invoke(main, ["simulate", "--scenario", "scen.json", "--out", "b.csv", "--seed", "2"])
        ya, _ = load_data_matrix("a.csv")
        yb, _ = load_data_matrix("b.csv")
        np.testing.assert_array_equal(ya, yb)

    def test_malformed_json_exits_2_with_position(self, runner, workdir):
        with open("bad.json", "w") as fh:
            fh.write('{"array": {\n  "n_sensors": oops}}\n')
        result = runner.invoke(main, ["simulate", "--scenario", "bad.json", "--out", "x.csv"])
        assert result.exit_code == 2
        assert "line 2" in result.output
        assert "column" in result.output

    def test_json_errors_mode_is_machine_readable(self, runner, workdir):
        with open("bad.json", "w") as fh:
            fh.write("{broken\n")
        result = runner.invoke(
            main, ["--json-errors", "simulate", "--scenario", "bad.json", "--out", "x.csv"]
        )
        assert result.exit_code == 2
        doc = json.loads(result.output.strip().splitlines()[-1])
        assert doc["exit_code"] == 2
        assert doc["line"] == 1
        assert isinstance(doc["column"], int)

    def test_missing_file_exits_2(self, runner, workdir):
        result = runner.invoke(main, ["simulate", "--scenario", "nope.json", "--out", "x.csv"])
        assert result.exit_code == 2

    def test_invalid_scenario_exits_2(self, runner, workdir):
        write_json("scen.json", {"array": {"n_sensors": 8, "spacing_m": 1.7}})
        result = runner.invoke(main, ["simulate", "--scenario", "scen.json", "--out", "x.csv"])
        assert result.exit_code == 2


class TestEstimate:
    def test_recovers_doas_exit_0(self, runner, workdir, data_csv):
        write_json("est.json", EST_CONFIG)
        result = runner.invoke(
            main, ["estimate", "--data", data_csv, "--config", "est.json", "--out", "report.json"]
        )
        assert result.exit_code == 0, result.output
        with open("report.json") as fh:
            report = json.load(fh)
        assert report["status"] == "ok"
        assert report["doas_deg"] == pytest.approx([70.0, 110.0], abs=1e-6)
        assert report["solver"]["status"] == "Converged"

    def test_variant_flag_overrides_config(self, runner, workdir, data_csv):
        write_json("est.json", EST_CONFIG)
        result = runner.invoke(
            main,
            [
                "estimate", "--data", data_csv, "--config", "est.json",
                "--out", "report.json", "--variant", "full",
            ],
        )
        assert result.exit_code == 0, result.output
        with open("report.json") as fh:
            report = json.load(fh)
        # full-grid block: N + N_f = (3*7+1) + 3; fast block: N_u + N_f
        assert report["solver"]["block_dim"] == 25

    def test_dim_mismatch_exits_2(self, runner, workdir, data_csv):
        config = dict(EST_CONFIG, array={"n_sensors": 12, "spacing_m": 1.7})
        write_json("est.json", config)
        result = runner.invoke(
            main, ["estimate", "--data", data_csv, "--config", "est.json", "--out", "report.json"]
        )
        assert result.exit_code == 2
        assert not os.path.exists("report.json")

    def test_estimation_failure_exits_3_but_writes_report(self, runner, workdir, data_csv):
        # an absurd source count exhausts the near-circle roots
        config = dict(EST_CONFIG, k=9)
        write_json("est.json", config)
        result = runner.invoke(
            main, ["estimate", "--data", data_csv, "--config", "est.json", "--out", "report.json"]
        )
        assert result.exit_code == 3
        with open("report.json") as fh:
            assert json.load(fh)["status"] == "estimation-failure"

    def test_max_iter_flag_starves_solver(self, runner, workdir, data_csv):
        write_json("est.json", EST_CONFIG)
        result = runner.invoke(
            main,
            [
                "estimate", "--data", data_csv, "--config", "est.json",
                "--out", "report.json", "--max-iter", "10",
            ],
        )
        assert result.exit_code == 3
        with open("report.json") as fh:
            assert json.load(fh)["solver"]["status"] == "MaxIter"

    def test_plot_writes_png(self, runner, workdir, data_csv):
        write_json("est.json", EST_CONFIG)
        result = runner.invoke(
            main,
            [
                "estimate", "--data", data_csv, "--config", "est.json",
                "--out", "report.json", "--plot",
            ],
        )
        assert result.exit_code == 0, result.output
        assert os.path.exists("report_dual.png")

    def test_no_plot_by_default(self, runner, workdir, data_csv):
        write_json("est.json", EST_CONFIG)
        runner.invoke(
            main, ["estimate", "--data", data_csv, "--config", "est.json", "--out", "report.json"]
        )
        assert not os.path.exists("report_dual.png")

    def test_dump_sdp_writes_problem_json(self, runner, workdir, data_csv):
        write_json("est.json", EST_CONFIG)
        result = runner.invoke(
            main,
            [
                "estimate", "--data", data_csv, "--config", "est.json",
                "--out", "report.json", "--dump-sdp", "prob.json",
            ],
        )
        assert result.exit_code == 0, result.output
        with open("prob.json") as fh:
            prob = json.load(fh)
        assert prob["block_dim"] > 0

    def test_invalid_variant_in_config_exits_2(self, runner, workdir, data_csv):
        write_json("est.json", dict(EST_CONFIG, variant="quantum"))
        result = runner.invoke(
            main, ["estimate", "--data", data_csv, "--config", "est.json", "--out", "r.json"]
        )
        assert result.exit_code == 2

    def test_idempotent_reports(self, runner, workdir, data_csv):
        write_json("est.json", EST_CONFIG)
        docs = []
        for name in ("r1.json", "r2.json"):
            result = runner.invoke(
                main, ["estimate", "--data", data_csv, "--config", "est.json", "--out", name]
            )
            assert result.exit_code == 0
            with open(name) as fh:
                doc = json.load(fh)
            doc.pop("wall_ms")
            docs.append(doc)
        assert docs[0] == docs[1]


class TestCertify:
    def test_valid_flat_configuration_case_3(self, runner, workdir):
        result = runner.invoke(
            main,
            [
                "certify", "--doas", "0.2,0.31", "--nf", "2", "--nm", "257",
                "--flat", "--out", "cert.csv", "--no-plot",
            ],
        )
        assert result.exit_code == 0, result.output
        with open("cert_verdict.json") as fh:
            verdict = json.load(fh)
        assert verdict["valid"] is True
        assert verdict["case"] == 3
        assert verdict["collisions"] == []
        assert verdict["max_off_norm"] < 1.0
        for norm in verdict["node_norms"]:
            assert norm == pytest.approx(1.0, abs=1e-9)

    def test_exact_collision_case_1_with_table(self, runner, workdir):
        result = runner.invoke(
            main,
            [
                "certify", "--doas", "0.5,0.16666666666666666", "--nf", "3",
                "--nm", "13", "--out", "cert.csv", "--no-plot",
            ],
        )
        assert result.exit_code == 0, result.output
        with open("cert_verdict.json") as fh:
            verdict = json.load(fh)
        assert verdict["case"] == 1
        assert verdict["valid"] is False  # generic RHS infeasible at the collision
        kinds = {entry["kind"] for entry in verdict["collisions"]}
        assert kinds == {"Exact"}
        assert verdict["collisions"][0]["freq_index"] == 3

    def test_near_collision_case_2(self, runner, workdir):
        result = runner.invoke(
            main,
            [
                "certify", "--doas", "0.25,0.001", "--nf", "4", "--nm", "13",
                "--out", "cert.csv", "--no-plot",
            ],
        )
        assert result.exit_code == 0, result.output
        with open("cert_verdict.json") as fh:
            verdict = json.load(fh)
        assert verdict["case"] == 2
        assert all(entry["kind"] == "Near" for entry in verdict["collisions"])

    def test_curve_csv_schema(self, runner, workdir):
        result = runner.invoke(
            main,
            [
                "certify", "--doas", "0.2,0.31", "--nf", "2", "--nm", "257",
                "--flat", "--out", "cert.csv", "--grid", "64", "--no-plot",
            ],
        )
        assert result.exit_code == 0, result.output
        with open("cert.csv") as fh:
            header = fh.readline().strip()
            n_rows = sum(1 for _ in fh)
        assert header == "w,psi_norm,abs_psi_f1,abs_psi_f2"
        assert n_rows == 64

    def test_plot_default_on(self, runner, workdir):
        result = runner.invoke(
            main,
            ["certify", "--doas", "0.2,0.31", "--nf", "2", "--nm", "257", "--flat", "--out", "cert.csv"],
        )
        assert result.exit_code == 0, result.output
        assert os.path.exists("cert.png")

    def test_degree_units(self, runner, workdir):
        result = runner.invoke(
            main,
            [
                "certify", "--doas", "66.42,78.46", "--units", "deg", "--nf", "2",
                "--nm", "257", "--flat", "--out", "cert.csv", "--no-plot",
            ],
        )
        assert result.exit_code == 0, result.output
        with open("cert_verdict.json") as fh:
            assert json.load(fh)["valid"] is True

    def test_bad_nm_exits_2(self, runner, workdir):
        result = runner.invoke(
            main, ["certify", "--doas", "0.2", "--nf", "2", "--nm", "14", "--out", "c.csv"]
        )
        assert result.exit_code == 2

    def test_duplicate_doas_exit_2(self, runner, workdir):
        result = runner.invoke(
            main, ["certify", "--doas", "0.2,0.2", "--nf", "2", "--nm", "13", "--out", "c.csv"]
        )
        assert result.exit_code == 2

    def test_unparseable_doas_exit_2(self, runner, workdir):
        result = runner.invoke(
            main, ["certify", "--doas", "0.2;0.3", "--nf", "2", "--nm", "13", "--out", "c.csv"]
        )
        assert result.exit_code == 2


class TestCollisions:
    def test_exact_collision_table(self, runner, workdir):
        result = runner.invoke(main, ["collisions", "--doas", "0.5,0.16666666666666666", "--nf", "3"])
        assert result.exit_code == 0, result.output
        assert "case: 1" in result.output
        assert "Exact" in result.output

    def test_collision_free(self, runner, workdir):
        result = runner.invoke(main, ["collisions", "--doas", "0.2,0.31", "--nf", "2"])
        assert result.exit_code == 0
        assert "case: 3" in result.output
        assert "no collisions" in result.output

    def test_json_report(self, runner, workdir):
        result = runner.invoke(
            main, ["collisions", "--doas", "0.25,0.001", "--nf", "4", "--out", "coll.json"]
        )
        assert result.exit_code == 0
        with open("coll.json") as fh:
            doc = json.load(fh)
        assert doc["case_number"] == 2
        assert doc["entries"][0]["kind"] == "Near"


class TestMonteCarlo:
    EXPERIMENT = {
        "name": "smoke",
        "array": {"n_sensors": 8, "spacing_m": 1.7},
        "multipliers": [1, 2, 3],
        "n_sources": 2,
        "method": "cbf",
        "sweep": {"axis": "none", "values": [0]},
        "n_trials": 3,
        "doa_rule": "fixed",
        "doas_deg": [70.0, 110.0],
        "amplitude_rule": "gaussian",
        "seed": 11,
        "histogram_bin_deg": 1.0,
    }

    def test_writes_sweep_outputs_and_plots(self, runner, workdir):
        write_json("exp.json", self.EXPERIMENT)
        result = runner.invoke(main, ["montecarlo", "--experiment", "exp.json", "--out-dir", "out"])
        assert result.exit_code == 0, result.output
        for suffix in ("sweep.csv", "manifest.json", "estimates.csv", "histogram.csv",
                       "sweep.png", "histogram.png"):
            assert os.path.exists(os.path.join("out", f"smoke_{suffix}"))

    def test_no_plot_suppresses_figures(self, runner, workdir):
        write_json("exp.json", self.EXPERIMENT)
        result = runner.invoke(
            main, ["montecarlo", "--experiment", "exp.json", "--out-dir", "out", "--no-plot"]
        )
        assert result.exit_code == 0, result.output
        assert os.path.exists(os.path.join("out", "smoke_sweep.csv"))
        assert not os.path.exists(os.path.join("out", "smoke_sweep.png"))

    def test_idempotent_results(self, runner, workdir):
        # identical inputs and seed give identical statistics and estimates
        # (the wall_ms column is timing and necessarily varies)
        write_json("exp.json", self.EXPERIMENT)
        for out_dir in ("out1", "out2"):
            result = runner.invoke(
                main, ["montecarlo", "--experiment", "exp.json", "--out-dir", out_dir, "--no-plot"]
            )
            assert result.exit_code == 0
        with open("out1/smoke_estimates.csv") as f1, open("out2/smoke_estimates.csv") as f2:
            assert f1.read() == f2.read()
        tables = []
        for out_dir in ("out1", "out2"):
            with open(f"{out_dir}/smoke_sweep.csv") as fh:
                header = fh.readline().strip().split(",")
                rows = [line.strip().split(",") for line in fh]
            keep = [i for i, name in enumerate(header) if name != "wall_ms"]
            tables.append([[row[i] for i in keep] for row in rows])
        assert tables[0] == tables[1]

    def test_invalid_experiment_exits_2(self, runner, workdir):
        write_json("exp.json", dict(self.EXPERIMENT, method="oracle"))
        result = runner.invoke(main, ["montecarlo", "--experiment", "exp.json", "--out-dir", "out"])
        assert result.exit_code == 2

    def test_malformed_experiment_json_exits_2(self, runner, workdir):
        with open("exp.json", "w") as fh:
            fh.write("{]\n")
        result = runner.invoke(main, ["montecarlo", "--experiment", "exp.json", "--out-dir", "out"])
        assert result.exit_code == 2
        assert "line 1" in result.output


class TestDualityCheck:
    def test_noise_free_gap_within_tolerance(self, runner, workdir, data_csv):
        result = runner.invoke(main, ["duality-check", "--data", data_csv])
        assert result.exit_code == 0, result.output
        assert "primal optimum:" in result.output
        assert "dual optimum:" in result.output
        assert "relative gap:" in result.output

    def test_zero_data_both_optima_zero(self, runner, workdir):
        from wbanm.model import save_data_matrix

        save_data_matrix("zero.csv", np.zeros((6, 2), dtype=complex), (1, 2))
        result = runner.invoke(main, ["duality-check", "--data", "zero.csv"])
        assert result.exit_code == 0, result.output
        primal = float(result.output.split("primal optimum:")[1].splitlines()[0])
        dual = float(result.output.split("dual optimum:")[1].splitlines()[0])
        assert abs(primal) < 1e-8
        assert abs(dual) < 1e-8

    def test_nonconsecutive_multipliers_exit_2(self, runner, workdir):
        from wbanm.model import save_data_matrix

        save_data_matrix("gap.csv", np.ones((6, 2), dtype=complex), (1, 3))
        result = runner.invoke(main, ["duality-check", "--data", "gap.csv"])
        assert result.exit_code == 2

    def test_starved_solver_exits_3(self, runner, workdir, data_csv):
        result = runner.invoke(main, ["duality-check", "--data", data_csv, "--max-iter", "5"])
        assert result.exit_code == 3

    def test_missing_data_exits_2(self, runner, workdir):
        result = runner.invoke(main, ["duality-check", "--data", "nope.csv"])
        assert result.exit_code == 2


class TestGroup:
    def test_help_lists_all_subcommands(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for name in ("simulate", "estimate", "certify", "collisions", "montecarlo", "duality-check"):
            assert name in result.output

    def test_version_flag(self, runner):
        result = runner.invoke(main, ["--version"])
        assert result.exit_code == 0
        assert "wbanm" in result.output
