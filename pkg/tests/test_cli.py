"""Command-line interface: outputs, manifest, exit codes and determinism."""
import json

import numpy as np
import pytest

from popform import cli, io, omgp
from popform.spectral import TimeSeries

SMALL = {
    "training": {"n_copies": 2, "mixture_points": 40, "pooled_points": 80, "omgp_points": 80},
    "gp": {"restarts": 1, "method": "l-bfgs-b"},
    "omgp": {"restarts": 1, "seeds_per_restart": 2, "em_max_iter": 3, "e_max_iter": 20},
    "novelty": {"normal_copies": 5, "sweep_replicas": 2, "posterior_samples": 50, "n_samples_per_trial": 40},
}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """Output of a complete ``popform run`` on the small configuration."""
    d = tmp_path_factory.mktemp("run")
    (d / "cfg.json").write_text(json.dumps(SMALL))
    code = cli.main(["run", "--config", str(d / "cfg.json"), "--out", str(d / "out"), "--seed", "3"])
    assert code == cli.EXIT_OK
    return d


def call(*argv):
    return cli.main([str(a) for a in argv])


def read_rows(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


class TestSimulate:
    def test_writes_members_and_manifest(self, tmp_path):
        assert call("simulate", "--out", tmp_path) == 0
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["manifest.json"] + [f"member_0{j}.{e}" for j in range(4) for e in ("csv", "json")]
        frf = io.read_frf_csv(tmp_path / "member_00.csv")
        assert frf.frequencies[0] == 48.0 and frf.frequencies.size == 164
        man = json.loads((tmp_path / "manifest.json").read_text())
        stage = man["stages"][0]
        assert stage["name"] == "simulate" and len(stage["files"]) == 8
        assert man["config_hash"] and "wall_time_s" in stage

    def test_deterministic(self, tmp_path):
        call("simulate", "--out", tmp_path / "a", "--seed", "4")
        call("simulate", "--out", tmp_path / "b", "--seed", "4")
        for name in ("member_02.csv", "member_02.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestH1:
    def write_pair(self, d, n, scale=1.0):
        x = np.random.default_rng(0).standard_normal(n)
        io.write_timeseries_csv(d / "f.csv", TimeSeries(1e-3, x))
        io.write_timeseries_csv(d / "r.csv", TimeSeries(1e-3, scale * x))

    def test_passthrough(self, tmp_path):
        self.write_pair(tmp_path, 4 * 256, 2.0)
        assert call("h1", "--force", tmp_path / "f.csv", "--response", tmp_path / "r.csv", "--out", tmp_path,
                    "--block-size", 256, "--n-blocks", 4) == 0
        frf = io.read_frf_csv(tmp_path / "frf.csv")
        np.testing.assert_allclose(frf.values[1:], 2.0, rtol=1e-10)
        _, rows = read_rows(tmp_path / "coherence.csv")
        assert len(rows) == 129

    def test_too_short(self, tmp_path, capsys):
        self.write_pair(tmp_path, 1000)
        code = call("h1", "--force", tmp_path / "f.csv", "--response", tmp_path / "r.csv", "--out", tmp_path,
                    "--block-size", 256, "--n-blocks", 4)
        assert code == cli.EXIT_INPUT
        assert "1024" in capsys.readouterr().err


class TestErrors:
    def test_malformed_csv(self, tmp_path, capsys):
        (tmp_path / "bad.csv").write_text("freq_hz,real,imag\n48,1,2\n49,x,2\n")
        assert call("fit", "--data", tmp_path / "bad.csv", "--out", tmp_path) == cli.EXIT_INPUT
        assert "bad.csv:3" in capsys.readouterr().err

    def test_bad_config(self, tmp_path):
        (tmp_path / "c.yaml").write_text("sed: 1\n")
        assert call("simulate", "--config", tmp_path / "c.yaml", "--out", tmp_path) == cli.EXIT_INPUT

    def test_numerical_failure(self, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise np.linalg.LinAlgError("not positive definite")

        call("simulate", "--out", tmp_path)
        monkeypatch.setattr(omgp, "fit", boom)
        code = call("fit", "--mode", "omgp", "--data", *sorted(tmp_path.glob("member_*.csv")), "--out", tmp_path)
        assert code == cli.EXIT_NUMERIC


class TestRun:
    def test_outputs(self, run_dir):
        out = run_dir / "out"
        for name in ("omgp_real.json", "omgp_imag.json", "fit_report_omgp.json", "threshold.json",
                     "normal_scores.csv", "sweep.csv", "posterior.csv", "envelope.csv", "manifest.json"):
            assert (out / name).exists(), name
        man = json.loads((out / "manifest.json").read_text())
        assert [s["name"] for s in man["stages"]] == sorted(["simulate", "fit-omgp", "threshold", "sweep",
                                                            "posterior"])
        report = json.loads((out / "fit_report_omgp.json").read_text())
        assert report["real"]["k"] == 4 and len(report["real"]["bound_trace"]) >= 1

    def test_sweep_table(self, run_dir):
        header, rows = read_rows(run_dir / "out" / "sweep.csv")
        assert header[0] == "member"
        assert len(rows) == 4 * 7 * 2

    def test_envelope_ordering(self, run_dir):
        header, rows = read_rows(run_dir / "out" / "envelope.csv")
        assert header == ["component", "freq_hz", "mean", "min", "max"]
        v = np.array(rows, float)
        assert np.all(v[:, 3] <= v[:, 2]) and np.all(v[:, 2] <= v[:, 4])
        header, rows = read_rows(run_dir / "out" / "posterior.csv")
        assert header[:3] == ["freq_hz", "real_mean_0", "real_var_0"] and len(rows) == 164

    def form_args(self, run_dir):
        out = run_dir / "out"
        return ["--real-model", out / "omgp_real.json", "--imag-model", out / "omgp_imag.json"]

    def test_novelty(self, run_dir, tmp_path):
        out = run_dir / "out"
        assert call("novelty", *self.form_args(run_dir), "--threshold-file", out / "threshold.json",
                    "--test", out / "member_00.csv", out / "member_03.csv", "--out", tmp_path) == 0
        header, rows = read_rows(tmp_path / "verdicts.csv")
        assert header == ["file", "score_real", "score_imag", "score_total", "threshold", "outlying"]
        assert len(rows) == 2 and all(r[5] in ("0", "1") for r in rows)

    def test_novelty_empty(self, run_dir, tmp_path):
        assert call("novelty", *self.form_args(run_dir), "--threshold", 1.0, "--out", tmp_path) == 0
        assert (tmp_path / "verdicts.csv").read_text() == "file,score_real,score_imag,score_total,threshold,outlying\n"

    def test_novelty_needs_threshold(self, run_dir, tmp_path):
        assert call("novelty", *self.form_args(run_dir), "--out", tmp_path) == cli.EXIT_INPUT

    def test_posterior_grid(self, run_dir, tmp_path):
        assert call("posterior", *self.form_args(run_dir), "--grid", 47, 55, 0.5, "--out", tmp_path) == 2
        assert call("posterior", *self.form_args(run_dir), "--grid", 50, 52, 0.5, "--n-samples", 20,
                    "--out", tmp_path) == 0
        _, rows = read_rows(tmp_path / "posterior.csv")
        assert len(rows) == 5

    def test_swapped_models(self, run_dir, tmp_path):
        out = run_dir / "out"
        code = call("posterior", "--real-model", out / "omgp_imag.json", "--imag-model", out / "omgp_real.json",
                    "--out", tmp_path)
        assert code == cli.EXIT_INPUT

    def test_threshold_rerun_is_identical(self, run_dir):
        out = run_dir / "out"
        before = (out / "normal_scores.csv").read_bytes()
        thr = json.loads((out / "threshold.json").read_text())["threshold"]
        code = call("threshold", *self.form_args(run_dir), "--config", run_dir / "cfg.json", "--seed", 3,
                    "--normal", *sorted(out.glob("member_*.csv")), "--out", out)
        assert code == 0
        assert (out / "normal_scores.csv").read_bytes() == before
        assert json.loads((out / "threshold.json").read_text())["threshold"] == thr


class TestFitModes:
    def test_supervised_mixture_and_single(self, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps(SMALL))
        call("simulate", "--out", tmp_path)
        data = sorted(tmp_path.glob("member_*.csv"))
        base = ["--config", tmp_path / "cfg.json", "--out", tmp_path, "--data", *data]
        assert call("fit", "--mode", "supervised-mixture", *base) == 0
        assert len(list(tmp_path.glob("gp_member_*_real.json"))) == 4
        assert len(list(tmp_path.glob("gp_member_*_imag.json"))) == 4
        assert call("fit", "--mode", "single-gp", *base) == 0
        rep = json.loads((tmp_path / "fit_report_single-gp.json").read_text())
        assert rep["real"]["nmse"] >= 0 and rep["imag"]["n_test"] == 4 * 2 * 164 - 80
        io.read_gp_model(tmp_path / "gp_single_imag.json")
