import subprocess
import sys

import numpy as np
import pytest

from onlinenmf import dataio
from onlinenmf.cli import main


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def dataset(tmp_path):
    d = tmp_path / "data"
    assert _run("simulate", "--model", "basis", "--m", 4, "--k", 2, "--t", 300, "--seed", 3,
                "--out", d) == 0
    return d


class TestSimulate:
    def test_files(self, dataset):
        m = dataio.DatasetManifest.read(dataset)
        assert (m.M, m.K, m.T, m.seed) == (4, 2, 300, 3)
        assert m.true_theta.psi.as_tuple() == (0.8571, 0.6926)
        assert np.all((m.true_theta.B >= 0.5) & (m.true_theta.B <= 5.0))
        assert dataio.read_observations(m.observations_path).shape == (300, 4)

    def test_deterministic(self, tmp_path, dataset):
        _run("simulate", "--model", "basis", "--m", 4, "--k", 2, "--t", 300, "--seed", 3,
             "--out", tmp_path / "again")
        assert (dataset / "manifest.txt").read_bytes() == \
            (tmp_path / "again" / "manifest.txt").read_bytes()

    def test_relaxed_latent(self, tmp_path):
        assert _run("simulate", "--model", "relaxed", "--alpha", 0.9, "--t", 5, "--dump-latent",
                    "--out", tmp_path) == 0
        X = np.loadtxt(tmp_path / "latent.csv", delimiter=",")
        assert X.shape == (5, 5) and np.all((X > 0) & (X < 1))

    @pytest.mark.parametrize("argv", [
        ["--p", "1.5"],
        ["--k", "0"],
        ["--b-low", "3", "--b-high", "2"],
        ["--model", "gaussian"],
    ])
    def test_usage_errors(self, tmp_path, argv):
        assert _run("simulate", *argv, "--out", tmp_path) == 1

    def test_missing_out(self, capsys):
        assert _run("simulate") == 1
        assert "--out" in capsys.readouterr().err


class TestFitAndEvaluate:
    @pytest.mark.parametrize("cmd", [["fit-batch", "--iters", 3],
                                     ["fit-online", "--trace-every", 100],
                                     ["fit-online", "--engine", "smc", "--particles", 50]])
    def test_fit_writes_trace(self, tmp_path, dataset, cmd):
        out = tmp_path / "fit"
        assert _run(*cmd, "--data", dataset, "--out", out) == 0
        tr = dataio.read_trace(out / "trace.csv")
        assert tr.final.theta.B.shape == (4, 2)
        est = dataio.parse_key_values(out / "estimate.txt")
        assert int(est["t"]) == tr.final.t

    def test_perfect_estimate_scores_zero(self, tmp_path, dataset, capsys):
        out = tmp_path / "fit"
        # psi-only fit keeps B at the truth
        assert _run("fit-online", "--data", dataset, "--estimate", "psi", "--out", out) == 0
        capsys.readouterr()
        assert _run("evaluate", "--data", dataset, "--estimate-file", out / "trace.csv",
                    "--out", tmp_path / "report.txt") == 0
        report = dataio.parse_key_values(tmp_path / "report.txt")
        assert float(report["max_abs_error"]) == 0.0
        assert report["permutation"] == "1,2"
        assert "abs_error_p" in capsys.readouterr().out

    def test_frozen_without_manifest(self, tmp_path, dataset):
        assert _run("fit-online", "--data", dataset / "observations.csv", "--model", "basis",
                    "--k", 2, "--estimate", "B", "--out", tmp_path) == 1

    def test_plain_observation_file(self, tmp_path, dataset):
        assert _run("fit-online", "--data", dataset / "observations.csv", "--model", "basis",
                    "--k", 2, "--out", tmp_path) == 0
        assert _run("fit-online", "--data", dataset / "observations.csv",
                    "--out", tmp_path) == 1

    def test_exact_on_relaxed(self, tmp_path):
        _run("simulate", "--model", "relaxed", "--t", 10, "--out", tmp_path / "d")
        assert _run("fit-online", "--data", tmp_path / "d", "--out", tmp_path / "f") == 1
        assert _run("fit-batch", "--data", tmp_path / "d", "--out", tmp_path / "f") == 1

    def test_data_errors(self, tmp_path, dataset):
        bad = tmp_path / "bad.csv"
        bad.write_text("1,2,3,4\n1,-2,3,4\n")
        assert _run("fit-online", "--data", bad, "--model", "basis", "--k", 2,
                    "--out", tmp_path) == 2
        assert _run("fit-online", "--data", tmp_path / "nope.csv", "--model", "basis",
                    "--k", 2, "--out", tmp_path) == 2
        with open(dataset / "observations.csv", "a") as fh:
            fh.write("1,1,1,1\n")
        assert _run("fit-online", "--data", dataset, "--out", tmp_path) == 2

    def test_evaluate_shape_mismatch(self, tmp_path, dataset):
        _run("simulate", "--k", 3, "--m", 4, "--t", 20, "--out", tmp_path / "d3")
        _run("fit-batch", "--data", tmp_path / "d3", "--iters", 1, "--out", tmp_path / "f")
        assert _run("evaluate", "--data", dataset, "--estimate-file",
                    tmp_path / "f" / "trace.csv") == 2

    def test_trace_export_aligns(self, tmp_path, dataset):
        _run("fit-online", "--data", dataset, "--estimate", "psi", "--out", tmp_path / "f")
        tr = dataio.read_trace(tmp_path / "f" / "trace.csv")
        swapped = dataio.EstimateTrace()
        for e in tr:
            swapped.append(e.t, e.theta.replace(B=e.theta.B[:, ::-1]))
        dataio.write_trace(tmp_path / "s.csv", swapped)
        assert _run("trace-export", "--trace", tmp_path / "s.csv", "--data", dataset,
                    "--out", tmp_path / "x.csv") == 0
        back = dataio.read_trace(tmp_path / "x.csv")
        np.testing.assert_array_equal(back.B_path(), tr.B_path())


class TestConfig:
    def test_file_supplies_and_flags_override(self, tmp_path, dataset):
        cfg = tmp_path / "c.txt"
        cfg.write_text(f"data = {dataset}\ntrace-every = 50\nburn_in = 10\n")
        assert _run("fit-online", "--config", cfg, "--out", tmp_path / "a") == 0
        assert len(dataio.read_trace(tmp_path / "a" / "trace.csv")) == 7
        assert _run("fit-online", "--config", cfg, "--trace-every", 300,
                    "--out", tmp_path / "b") == 0
        assert len(dataio.read_trace(tmp_path / "b" / "trace.csv")) == 2

    @pytest.mark.parametrize("text", ["bogus = 1\n", "engine = gpu\n", "particles = many\n"])
    def test_bad_config(self, tmp_path, dataset, text):
        cfg = tmp_path / "c.txt"
        cfg.write_text(text)
        assert _run("fit-online", "--config", cfg, "--data", dataset, "--out", tmp_path) == 1

    def test_missing_config(self, tmp_path, dataset):
        assert _run("fit-online", "--config", tmp_path / "none.txt", "--data", dataset,
                    "--out", tmp_path) == 1


def test_same_seed_same_bytes(tmp_path):
    outs = []
    for run in ("a", "b"):
        d = tmp_path / run
        _run("simulate", "--model", "relaxed", "--m", 3, "--k", 2, "--t", 200, "--seed", 11,
             "--out", d / "data")
        _run("fit-online", "--data", d / "data", "--engine", "smc", "--particles", 64,
             "--seed", 5, "--trace-every", 20, "--out", d / "fit")
        outs.append([(d / "data" / "observations.csv").read_bytes(),
                     (d / "fit" / "trace.csv").read_bytes()])
    assert outs[0] == outs[1]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "onlinenmf", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    assert "fit-online" in res.stdout
