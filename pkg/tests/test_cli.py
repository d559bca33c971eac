import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from glamsens import cli
from glamsens.glam import GlamModel
from glamsens.io import read_samples_csv
from glamsens.pce import PceModel, enumerate_basis, uniform_model
from glamsens.report import SobolReport

BASE = {
    "seed": 5,
    "simulator": "toy",
    "design": {"N": 150},
    "fit": {"restarts": 0, "mean_degrees": [0, 1, 2, 3, 4], "var_degrees": [0, 1, 2]},
    "sensitivity": {"qois": ["mean", "quantile(0.9)"],
                    "pce": {"n_pc": 500, "degrees": [1, 2, 3]}},
    "errors": {"n_test": 2000, "qoi_points": 50, "qoi_reps": 50},
    "reference": {"n_points": 100, "n_reps": 100, "n_mc": 1000, "qois": ["mean"]},
}


def _config(tmp_path, name="run.yaml", **overrides):
    d = json.loads(json.dumps(BASE))
    d.update(overrides)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(d))
    return path


def _run(*argv):
    return cli.main([str(a) for a in argv])


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


class TestSimulateFit:
    def test_simulate_writes_samples(self, tmp_path):
        cfg = _config(tmp_path)
        assert _run("simulate", "--config", cfg, "--out", tmp_path / "o") == 0
        X, y, names = read_samples_csv(tmp_path / "o" / "samples.csv", 3)
        assert X.shape == (150, 3) and names == ["x1", "x2", "x3"]
        text = (tmp_path / "o" / "samples.csv").read_text()
        assert text.startswith("# config_hash: ") and "# seed: 5\n" in text

    def test_replications_have_rep_column(self, tmp_path):
        cfg = _config(tmp_path, design={"N": 4, "replications": 3})
        assert _run("simulate", "--config", cfg, "--out", tmp_path / "o") == 0
        lines = [ln for ln in (tmp_path / "o" / "samples.csv").read_text().splitlines() if not ln.startswith("#")]
        assert lines[0] == "x1,x2,x3,rep,y"
        assert len(lines) == 13

    def test_fit_model_round_trip(self, tmp_path):
        cfg = _config(tmp_path)
        out = tmp_path / "o"
        assert _run("fit", "--config", cfg, "--out", out) == 0
        d = json.loads((out / "model.json").read_text())
        assert d["provenance"]["seed"] == 5
        g = GlamModel.from_dict(d)
        back = GlamModel.from_dict(json.loads(json.dumps(g.to_dict())))
        for a, b in zip(g.components, back.components):
            assert a.coefficients.tobytes() == b.coefficients.tobytes()
        report = json.loads((out / "fit_report.json").read_text())
        assert np.isfinite(report["nll"])

    def test_fit_from_data_file(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 1, (200, 2))
        y = X[:, 0] + 0.1 * rng.standard_normal(200)
        rows = ["a,b,y"] + [f"{float(a)!r},{float(b)!r},{float(c)!r}" for (a, b), c in zip(X, y)]
        (tmp_path / "d.csv").write_text("\n".join(rows) + "\n")
        d = {"seed": 1, "data": "d.csv", "fit": {"restarts": 0},
             "inputs": [{"name": "a", "kind": "uniform", "a": 0, "b": 1},
                        {"name": "b", "kind": "uniform", "a": 0, "b": 1}]}
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(d))
        assert _run("fit", "--config", tmp_path / "c.yaml", "--out", tmp_path / "o") == 0
        prov = json.loads((tmp_path / "o" / "model.json").read_text())["provenance"]
        assert len(prov["data_sha256"]) == 64
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "a,b,y"  # input untouched

    def test_seed_flag_overrides(self, tmp_path):
        cfg = _config(tmp_path)
        _run("simulate", "--config", cfg, "--out", tmp_path / "a", "--seed", "9")
        _run("simulate", "--config", cfg, "--out", tmp_path / "b")
        a = (tmp_path / "a" / "samples.csv").read_text()
        assert "# seed: 9" in a and a != (tmp_path / "b" / "samples.csv").read_text()


class TestInputErrors:
    def test_malformed_row_names_row(self, tmp_path, capsys):
        (tmp_path / "d.csv").write_text("x1,y\n0.5,1.0\n0.2,oops\n")
        d = {"seed": 1, "data": "d.csv", "inputs": [{"kind": "uniform", "a": 0, "b": 1}]}
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(d))
        assert _run("fit", "--config", tmp_path / "c.yaml", "--out", tmp_path / "o") == 2
        err = _error(capsys)
        assert err["row"] == 3 and "row 3" in err["message"]

    def test_wrong_field_count(self, tmp_path, capsys):
        (tmp_path / "d.csv").write_text("x1,y\n0.5,1.0,2.0\n")
        d = {"seed": 1, "data": "d.csv", "inputs": [{"kind": "uniform", "a": 0, "b": 1}]}
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(d))
        assert _run("fit", "--config", tmp_path / "c.yaml", "--out", tmp_path / "o") == 2
        assert _error(capsys)["row"] == 2

    def test_missing_seed(self, tmp_path, capsys):
        d = dict(BASE)
        d.pop("seed")
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(d))
        assert _run("simulate", "--config", tmp_path / "c.yaml", "--out", tmp_path) == 2
        assert _error(capsys)["key"] == "seed"

    def test_unknown_key(self, tmp_path, capsys):
        cfg = _config(tmp_path, bogus=1)
        assert _run("fit", "--config", cfg, "--out", tmp_path) == 2
        assert "bogus" in _error(capsys)["message"]

    def test_bad_fit_setting(self, tmp_path, capsys):
        cfg = _config(tmp_path, fit={"optimiser": "x"})
        assert _run("fit", "--config", cfg, "--out", tmp_path) == 2

    def test_missing_model(self, tmp_path, capsys):
        cfg = _config(tmp_path)
        assert _run("sens", "--config", cfg, "--out", tmp_path, "--model", tmp_path / "nope.json") == 2
        assert _error(capsys)["error"] == "InputFileError"

    def test_missing_config(self, tmp_path, capsys):
        assert _run("fit", "--config", tmp_path / "none.yaml", "--out", tmp_path) == 2

    def test_reference_budget_refused(self, tmp_path, capsys):
        cfg = _config(tmp_path, reference={"n_points": 50, "n_reps": 100, "n_mc": 1000})
        assert _run("reference", "--config", cfg, "--out", tmp_path / "o") == 2
        err = _error(capsys)
        assert err["key"] == "reference.n_points" and "minimum" in err["message"]
        assert not (tmp_path / "o" / "reference_summary.json").exists()

    def test_reference_needs_simulator(self, tmp_path, capsys):
        (tmp_path / "d.csv").write_text("x1,y\n0.5,1.0\n")
        d = {"seed": 1, "data": "d.csv", "inputs": [{"kind": "uniform", "a": 0, "b": 1}]}
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(d))
        assert _run("reference", "--config", tmp_path / "c.yaml", "--out", tmp_path) == 2


class TestSens:
    def test_reports_and_csv_round_trip(self, tmp_path):
        cfg = _config(tmp_path)
        out = tmp_path / "o"
        assert _run("fit", "--config", cfg, "--out", out) == 0
        assert _run("sens", "--config", cfg, "--out", out) == 0
        summary = json.loads((out / "sens_summary.json").read_text())
        assert set(summary["reports"]) == {"classical", "mean", "quantile(0.9)"}
        d = json.loads((out / "sobol_classical.json").read_text())
        rep = SobolReport.from_dict(d)
        assert len(rep.vector("first")) == 3 and len(rep.vector("total")) == 3
        back = SobolReport.from_csv((out / "sobol_classical.csv").read_text(), rep.variables)
        assert [e.value for e in back.entries] == [e.value for e in rep.entries]

    def test_undefined_qoi_reported_others_kept(self, tmp_path):
        im = uniform_model([(0.0, 1.0), (0.0, 1.0)])
        g = GlamModel(PceModel(enumerate_basis(2, 1), np.array([0.0, 1.0, 0.5]), im),
                      PceModel.constant(0.0, im),
                      PceModel.constant(0.1, im), PceModel.constant(-0.7, im))
        (tmp_path / "m.json").write_text(json.dumps(g.to_dict()))
        cfg = _config(tmp_path, sensitivity={"classical": False, "qois": ["std", "quantile(0.5)"],
                                             "pce": {"n_pc": 200, "degrees": [1]}})
        assert _run("sens", "--config", cfg, "--out", tmp_path / "o", "--model", tmp_path / "m.json") == 0
        summary = json.loads((tmp_path / "o" / "sens_summary.json").read_text())
        assert "std" in summary["errors"] and "MomentUndefined" in summary["errors"]["std"]
        assert list(summary["reports"]) == ["quantile(0.5)"]

    def test_pickfreeze_with_bootstrap(self, tmp_path):
        cfg = _config(tmp_path, sensitivity={"qois": ["mean"], "method": "pickfreeze",
                                             "n_mc": 500, "n_boot": 50})
        out = tmp_path / "o"
        assert _run("fit", "--config", cfg, "--out", out) == 0
        assert _run("sens", "--config", cfg, "--out", out) == 0
        d = json.loads((out / "sobol_mean.json").read_text())
        assert all(e["ci"] is not None for e in d["indices"])


class TestStudy:
    def test_single_rep(self, tmp_path):
        cfg = _config(tmp_path, repetitions=1, sensitivity={"classical": False, "qois": []})
        out = tmp_path / "o"
        assert _run("study", "--config", cfg, "--out", out) == 0
        lines = [ln for ln in (out / "study.csv").read_text().splitlines() if not ln.startswith("#")]
        assert lines[0] == "N,rep,metric,value"
        assert {ln.split(",")[:2] == ["150", "0"] for ln in lines[1:]} == {True}
        assert any(",eps_Q," in ln for ln in lines)

    def test_resume_after_interrupt(self, tmp_path, monkeypatch):
        cfg = _config(tmp_path, repetitions=3, design={"N": 120},
                      sensitivity={"classical": False, "qois": ["mean"],
                                   "pce": {"n_pc": 300, "degrees": [1, 2]}})
        full = tmp_path / "full"
        assert _run("study", "--config", cfg, "--out", full) == 0

        part = tmp_path / "part"
        real = cli._run_study_task
        calls = []

        def flaky(payload):
            calls.append(payload[1:3])
            if len(calls) == 2:
                raise KeyboardInterrupt
            return real(payload)

        monkeypatch.setattr(cli, "_run_study_task", flaky)
        with pytest.raises(KeyboardInterrupt):
            _run("study", "--config", cfg, "--out", part)
        assert len((part / "manifest.jsonl").read_text().splitlines()) == 1

        calls.clear()
        monkeypatch.setattr(cli, "_run_study_task", lambda p: (calls.append(p[1:3]), real(p))[1])
        assert _run("study", "--config", cfg, "--out", part) == 0
        assert calls == [(120, 1), (120, 2)]
        assert _tree(part) == _tree(full)

    def test_manifest_of_other_config_refused(self, tmp_path, capsys):
        out = tmp_path / "o"
        a = _config(tmp_path, "a.yaml", repetitions=1, sensitivity={"classical": False})
        b = _config(tmp_path, "b.yaml", repetitions=1, seed=6, sensitivity={"classical": False})
        assert _run("study", "--config", a, "--out", out) == 0
        assert _run("study", "--config", b, "--out", out) == 2
        assert "different config" in _error(capsys)["message"]


class TestDeterminism:
    @pytest.mark.parametrize("command", ["simulate", "fit", "reference"])
    def test_byte_identical(self, tmp_path, command):
        cfg = _config(tmp_path)
        assert _run(command, "--config", cfg, "--out", tmp_path / "a") == 0
        assert _run(command, "--config", cfg, "--out", tmp_path / "b") == 0
        a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
        assert a and a == b

    def test_sens_byte_identical(self, tmp_path):
        cfg = _config(tmp_path)
        assert _run("fit", "--config", cfg, "--out", tmp_path / "m") == 0
        model = tmp_path / "m" / "model.json"
        for d in ("a", "b"):
            assert _run("sens", "--config", cfg, "--out", tmp_path / d, "--model", model) == 0
        assert _tree(tmp_path / "a") == _tree(tmp_path / "b")

    def test_study_threads_do_not_change_output(self, tmp_path):
        cfg = _config(tmp_path, repetitions=2, design={"N": 120},
                      sensitivity={"classical": False, "qois": []})
        assert _run("study", "--config", cfg, "--out", tmp_path / "a") == 0
        assert _run("study", "--config", cfg, "--out", tmp_path / "b", "--threads", "2") == 0
        assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
