import json
import os

import pytest

from crossfit.cli import build_parser, main
from crossfit.datasets import arterial_path, water_path

ARTERIAL_ARGS = [
    "--data", str(arterial_path()), "--response", "Pressure",
    "--treatment", "Treatment", "--period", "Period", "--id", "Subject",
]
WATER_ARGS = [
    "--data", str(water_path()), "--response", "LCC",
    "--treatment", "Treatment", "--period", "Period", "--id", "ID",
]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestCreateCarry:
    def test_water_complex_names(self, tmp_path, capsys):
        code, out, _ = run(["create-carry", *WATER_ARGS, "--complex",
                            "--out", str(tmp_path)], capsys)
        assert code == 0
        assert "Carry_0_over_1" in out
        assert "Carry_1_over_0" in out
        augmented = (tmp_path / "augmented.csv").read_text().splitlines()
        header = augmented[0].split(",")
        assert header[:5] == ["ID", "Period", "Treatment", "Age", "LCC"]
        assert header[5:] == ["Carry_0_over_1", "Carry_1_over_0"]

    def test_arterial_simple_names_in_order(self, tmp_path, capsys):
        code, out, _ = run(["create-carry", *ARTERIAL_ARGS,
                            "--out", str(tmp_path)], capsys)
        assert code == 0
        names = [line.split(": ")[1] for line in out.splitlines()
                 if line.startswith("added carry column")]
        assert names == ["Carry_B", "Carry_C"]


class TestFit:
    def test_report_keys_and_roundtrip(self, tmp_path, capsys):
        code, out, _ = run(["fit", *ARTERIAL_ARGS, "--time", "Time",
                            "--covar", "Time", "--family", "gaussian",
                            "--correlation", "exchangeable",
                            "--out", str(tmp_path)], capsys)
        assert code == 0
        assert "Signif. codes" in out
        path = tmp_path / "report.json"
        raw = path.read_bytes()
        report = json.loads(raw)
        assert set(report) == {"metadata", "model", "coefficients",
                               "dispersion", "alpha", "correlation_structure",
                               "n_clusters", "max_cluster_size", "converged",
                               "criteria"}
        assert set(report["criteria"]) == {"qic", "qicu", "quasi_lik", "cic",
                                           "params", "qicc"}
        assert [c["name"] for c in report["coefficients"]] == [
            "(Intercept)", "Period2", "Period3", "TreatmentB", "TreatmentC",
            "Carry_B", "Carry_C", "Time"]
        assert report["n_clusters"] == 12
        assert report["metadata"]["timestamp"] is None
        # canonical serialization round-trips byte-identically
        again = json.dumps(json.loads(raw.decode()), indent=2,
                           sort_keys=True) + "\n"
        assert again.encode() == raw

    def test_repeat_runs_byte_identical(self, tmp_path, capsys):
        argv = ["fit", *WATER_ARGS, "--covar", "Age", "--family", "poisson",
                "--correlation", "ar1"]
        run([*argv, "--out", str(tmp_path / "one")], capsys)
        run([*argv, "--out", str(tmp_path / "two")], capsys)
        assert ((tmp_path / "one/report.json").read_bytes()
                == (tmp_path / "two/report.json").read_bytes())

    def test_formula_override(self, tmp_path, capsys):
        code, _, _ = run(["fit", *ARTERIAL_ARGS, "--time", "Time",
                          "--carry", "none",
                          "--formula", "Pressure ~ Treatment + Time",
                          "--out", str(tmp_path)], capsys)
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert [c["name"] for c in report["coefficients"]] == [
            "(Intercept)", "TreatmentB", "TreatmentC", "Time"]

    def test_explicit_carry_names(self, tmp_path, capsys):
        code, _, _ = run(["create-carry", *ARTERIAL_ARGS,
                          "--out", str(tmp_path / "aug")], capsys)
        assert code == 0
        code, _, _ = run(["fit", "--data", str(tmp_path / "aug/augmented.csv"),
                          "--response", "Pressure", "--treatment", "Treatment",
                          "--period", "Period", "--id", "Subject",
                          "--carry", "Carry_B,Carry_C",
                          "--out", str(tmp_path / "fit")], capsys)
        assert code == 0

    def test_missing_column_exits_3(self, tmp_path, capsys):
        code, _, err = run(["fit", "--data", str(arterial_path()),
                            "--response", "Pressure", "--treatment", "Dose",
                            "--period", "Period", "--id", "Subject",
                            "--out", str(tmp_path)], capsys)
        assert code == 3
        assert "missing columns" in err

    @pytest.mark.filterwarnings("ignore::crossfit.errors.FitWarning")
    def test_nonconvergence_strict_exits_4(self, tmp_path, capsys):
        code, _, err = run(["fit", *ARTERIAL_ARGS, "--covar", "Time",
                            "--time", "Time", "--max-iter", "1",
                            "--tol", "1e-14", "--strict",
                            "--out", str(tmp_path)], capsys)
        assert code == 4
        assert "converge" in err

    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["fit", "--frobnicate"])
        assert exc.value.code == 2


class TestFitKron:
    @pytest.mark.filterwarnings("ignore::crossfit.errors.FitWarning")
    def test_report_matrices(self, tmp_path, capsys):
        code, out, _ = run(["fit-kron", *ARTERIAL_ARGS, "--time", "Time",
                            "--within-correlation", "ar1",
                            "--out", str(tmp_path)], capsys)
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert len(report["within"]) == 10
        assert len(report["between"]) == 3
        assert report["scaling_alpha"] is not None
        assert "Within-period correlation" in out


class TestFitSp:
    def test_curve_files_and_plots(self, tmp_path, capsys):
        code, _, _ = run(["fit-sp", *ARTERIAL_ARGS, "--time", "Time",
                          "--correlation", "exchangeable",
                          "--plot", str(tmp_path / "plots"),
                          "--out", str(tmp_path)], capsys)
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["nodes"] == 4
        csvs = sorted(tmp_path.glob("curve_*.csv"))
        assert len(csvs) == 3
        header = csvs[0].read_text().splitlines()[0]
        assert header == "effect,time,estimate,se,lower,upper"
        body = csvs[0].read_text().splitlines()[1:]
        assert len(body) == 100
        svgs = sorted((tmp_path / "plots").glob("curve_*.svg"))
        assert len(svgs) == 3


class TestCompare:
    def _write_report(self, path, qic, params, quasi_lik=-100.0):
        cic = (qic + 2 * quasi_lik) / 2
        report = {"criteria": {"qic": qic, "qicu": -2 * quasi_lik + 2 * params,
                               "quasi_lik": quasi_lik, "cic": cic,
                               "params": params, "qicc": qic + 1.0}}
        path.write_text(json.dumps(report))

    def test_ranking_and_tiebreak(self, tmp_path, capsys):
        a, b, c = (tmp_path / n for n in ("a.json", "b.json", "c.json"))
        self._write_report(a, 100.0, params=5)
        self._write_report(b, 100.0, params=3)
        self._write_report(c, 90.0, params=9)
        code, out, _ = run(["compare", str(a), str(b), str(c),
                            "--out", str(tmp_path)], capsys)
        assert code == 0
        ranking = json.loads((tmp_path / "ranking.json").read_text())["ranking"]
        assert [r["label"] for r in ranking] == ["c", "b", "a"]

    def test_report_without_criteria_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"criteria": None}))
        code, _, err = run(["compare", str(bad), str(bad)], capsys)
        assert code == 3
        assert "criteria" in err


class TestSimulate:
    def _config(self, tmp_path):
        cfg = {
            "sequences": ["AB", "BA"], "units_per_sequence": 6,
            "times": [0.0, 1.0, 2.0], "family": "gaussian",
            "beta": {"(Intercept)": 1.0},
            "correlation": {"structure": "ar1", "alpha": 0.4},
            "seed": 11,
        }
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(cfg))
        return path

    def test_deterministic_outputs(self, tmp_path, capsys):
        cfg = self._config(tmp_path)
        run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")],
            capsys)
        run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")],
            capsys)
        assert ((tmp_path / "a/simulated.csv").read_bytes()
                == (tmp_path / "b/simulated.csv").read_bytes())
        truth = json.loads((tmp_path / "a/truth.json").read_text())
        assert truth["seed"] == 11

    def test_env_seed_overrides_flag(self, tmp_path, capsys):
        cfg = self._config(tmp_path)
        os.environ["CROSSFIT_SEED"] = "99"
        try:
            run(["simulate", "--config", str(cfg), "--seed", "11",
                 "--out", str(tmp_path / "env")], capsys)
        finally:
            del os.environ["CROSSFIT_SEED"]
        truth = json.loads((tmp_path / "env/truth.json").read_text())
        assert truth["seed"] == 99


def test_every_subcommand_has_help():
    parser = build_parser()
    for name in ("create-carry", "fit", "fit-kron", "fit-sp", "compare",
                 "simulate"):
        with pytest.raises(SystemExit) as exc:
            parser.parse_args([name, "--help"])
        assert exc.value.code == 0


def test_help_lists_all_fit_flags(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["fit", "--help"])
    out = capsys.readouterr().out
    for flag in ("--data", "--response", "--treatment", "--period", "--id",
                 "--carry", "--covar", "--family", "--link", "--correlation",
                 "--formula", "--tol", "--max-iter", "--strict", "--out"):
        assert flag in out


def test_numpy_backend_subprocess():
    # the env flag selects the pure-numpy kernels; results stay consistent
    import subprocess
    import sys
    code = (
        "import os; os.environ['CROSSFIT_BACKEND']='numpy';"
        "from crossfit import kernels; assert kernels.BACKEND=='numpy';"
        "from crossfit import datasets, create_carry, fit_gee;"
        "fit = fit_gee(create_carry(datasets.load_arterial()),"
        " correlation='exchangeable', covariates=['Time']);"
        "print(round(fit.dispersion, 6))"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                         text=True, check=True)
    fit_phi = float(out.stdout.strip())
    from crossfit import datasets, create_carry, fit_gee
    ref = fit_gee(create_carry(datasets.load_arterial()),
                  correlation="exchangeable", covariates=["Time"])
    assert fit_phi == pytest.approx(ref.dispersion, rel=1e-9)
