"""
Tests for the command line interface
"""

import json
import math

import numpy as np
import pytest

from sbite import cli
from sbite.errors import NumericalError
from sbite.formats import read_channel_csv, write_channel_csv
from sbite.models.sequence import MultichannelSeries

FAST_GRID = ["--nus", "1", "2", "--n-lambda", "20"]


def write_toy_regression(path, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((50, 3))
    y = X @ np.array([3.0, -2.0, 1.5]) + 0.5 * rng.standard_normal(50)
    rows = ["y,x1,x2,x3"] + [",".join(repr(float(v)) for v in (yi, *xi)) for yi, xi in zip(y, X)]
    path.write_text("\n".join(rows) + "\n")
    return path


class TestFit:
    """Test the fit command"""

    def test_active_set(self, tmp_path, capsys):
        """Test a dominant signal keeps every variable"""
        path = write_toy_regression(tmp_path / "toy.csv")
        code = cli.main(["fit", "--input", str(path), "--rule", "sure", *FAST_GRID, "--stage2-points", "10"])
        assert code == cli.EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["active_set"] == [1, 2, 3]
        assert report["coefficients"]["x1"] == pytest.approx(3.0, abs=0.5)
        assert set(report) >= {"lambda", "nu", "s", "sure", "gsure", "edf", "intercept"}

    def test_output_file(self, tmp_path, capsys):
        """Test the report is written to a file with a printed summary"""
        path = write_toy_regression(tmp_path / "toy.csv")
        target = tmp_path / "fit.json"
        code = cli.main(["fit", "-i", str(path), "--rule", "gsure", *FAST_GRID, "--stage2-points", "5",
                         "-o", str(target)])
        assert code == cli.EXIT_OK
        assert "Active set" in capsys.readouterr().out
        assert json.loads(target.read_text())["active_set"]

    def test_missing_input(self, tmp_path):
        """Test configuration errors exit with 2"""
        assert cli.main(["fit", "--input", str(tmp_path / "missing.csv")]) == cli.EXIT_CONFIG

    def test_bad_blocks(self, tmp_path):
        """Test a partition that does not cover the design"""
        path = write_toy_regression(tmp_path / "toy.csv")
        assert cli.main(["fit", "--input", str(path), "--blocks", "2,2"]) == cli.EXIT_CONFIG

    def test_numerical_failure(self, tmp_path, monkeypatch):
        """Test numerical failures exit with 3"""
        def fail(*args, **kwargs):
            raise NumericalError("no stage-1 grid point converged")

        monkeypatch.setattr(cli, "search_hyperparameters", fail)
        path = write_toy_regression(tmp_path / "toy.csv")
        assert cli.main(["fit", "--input", str(path)]) == cli.EXIT_NUMERICAL


class TestSureGrid:
    """Test the sure-grid command"""

    def test_surface(self, tmp_path, capsys):
        """Test one CSV row per grid point"""
        path = write_toy_regression(tmp_path / "toy.csv")
        code = cli.main(["sure-grid", "--input", str(path), "--nus", "1", "2", "--lambdas", "0.1", "1"])
        assert code == cli.EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "lambda,nu,s,sure,gsure,edf,active_count"
        assert len(lines) == 5

    def test_auto_smoothness(self, tmp_path):
        """Test --s auto and file output"""
        path = write_toy_regression(tmp_path / "toy.csv")
        target = tmp_path / "surface.csv"
        code = cli.main(["sure-grid", "--input", str(path), "--nus", "4", "--n-lambda", "5", "--s", "auto",
                         "-o", str(target)])
        assert code == cli.EXIT_OK
        rows = target.read_text().splitlines()[1:]
        assert len(rows) == 5
        assert all(row.split(",")[2] == format(2 * math.log(4.0) + 1, ".12g") for row in rows)


class TestDenoise:
    """Test the denoise command"""

    def test_denoise_csv(self, tmp_path, capsys):
        """Test channel CSV in and out"""
        source = tmp_path / "noisy.csv"
        target = tmp_path / "clean.csv"
        write_channel_csv(source, MultichannelSeries(np.random.default_rng(1).standard_normal((2, 256))))
        code = cli.main(["denoise", "-i", str(source), "-o", str(target), "--rule", "universal"])
        assert code == cli.EXIT_OK
        assert read_channel_csv(target).samples.shape == (2, 256)
        assert "level 4" in capsys.readouterr().out

    def test_bad_series(self, tmp_path):
        """Test a non power-of-two series is a configuration error"""
        source = tmp_path / "noisy.csv"
        source.write_text("ch1\n" + "\n".join(["1.0"] * 100) + "\n")
        code = cli.main(["denoise", "-i", str(source), "-o", str(tmp_path / "out.csv")])
        assert code == cli.EXIT_CONFIG


class TestThreshold:
    """Test the threshold command"""

    def test_q2(self, capsys):
        """Test d_N = 2 ln N for Q = 2"""
        assert cli.main(["threshold", "--n", "1000", "--q", "2"]) == cli.EXIT_OK
        out = capsys.readouterr().out
        assert format(2 * math.log(1000), ".12g") in out
        assert "finite-sample" in out
        assert "asymptotic" in out

    def test_invalid_n(self):
        """Test N < 2"""
        assert cli.main(["threshold", "--n", "1"]) == cli.EXIT_CONFIG


class TestSimulate:
    """Test the simulate command"""

    ARGS = ["simulate", "js04", "--cells", "5:7:100", "--replicates", "3", "--seed", "1",
            "--nus", "1", "2", "--n-lambda", "10", "--stage2-points", "5"]

    def test_byte_identical(self, capsys):
        """Test reruns with different thread counts print the same CSV"""
        assert cli.main(self.ARGS + ["--threads", "1"]) == cli.EXIT_OK
        first = capsys.readouterr().out
        assert cli.main(self.ARGS + ["--threads", "3"]) == cli.EXIT_OK
        second = capsys.readouterr().out
        assert first == second
        assert first.splitlines()[0] == "experiment,cell,estimator,rule,metric,median,se,replicates,mean"
        assert len(first.splitlines()) == 4

    def test_config_file(self, tmp_path, capsys):
        """Test YAML configuration with command-line overrides"""
        config = tmp_path / "run.yaml"
        config.write_text("experiment: null-coverage\nseed: 4\ncells: ['64:1']\nreplicates: 100\n")
        target = tmp_path / "out.csv"
        code = cli.main(["simulate", "null-coverage", "--seed", "4", "--replicates", "5", "-c", str(config),
                         "-o", str(target)])
        assert code == cli.EXIT_OK
        assert ",5," in target.read_text().splitlines()[1]
        assert "Wrote 2 rows" in capsys.readouterr().out

    def test_bad_cell(self):
        """Test malformed cells exit with 2"""
        assert cli.main(["simulate", "js04", "--seed", "1", "--cells", "5"]) == cli.EXIT_CONFIG

    def test_missing_seed(self):
        """Test argparse rejects a missing seed"""
        with pytest.raises(SystemExit) as exc:
            cli.main(["simulate", "js04"])
        assert exc.value.code == 2


def test_no_command(capsys):
    """Test help is printed without a command"""
    assert cli.main([]) == cli.EXIT_CONFIG
    assert "usage" in capsys.readouterr().out
