import json
import os
import subprocess
import sys

import numpy as np
import pytest

from prognostic.cli import main
from prognostic.serialize import load_document, save_document
from prognostic.errors import SchemaError

from test_pipeline import SMALL


def run(*args):
    with pytest.raises(SystemExit) as exc:
        main(list(args))
    return exc.value.code


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--n", "1500", "--seed", "11", "--out", str(d / "cohort.csv"), "--truth",
               str(d / "truth.csv")) == 0
    cfg = {**SMALL, "seeds": [0], "source": {"kind": "csv", "path": str(d / "cohort.csv")}}
    (d / "cfg.json").write_text(json.dumps(cfg))
    assert run("train", "--config", str(d / "cfg.json"), "--out", str(d / "out")) == 0
    return d


def test_synth_and_ingest(workdir, capsys):
    assert len((workdir / "truth.csv").read_text().splitlines()) == 1501
    assert run("ingest-check", str(workdir / "cohort.csv")) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["records"] == 1500 and 0 < summary["baseline_invalid_fraction"] < 1


def test_train_outputs(workdir):
    out = workdir / "out"
    for name in ("report.json", "metrics.csv", "plots", "models/ensemble.json", "models/forest.npz"):
        assert (out / name).exists()


def test_evaluate_predict_plot(workdir, capsys):
    models, data = str(workdir / "out" / "models"), str(workdir / "cohort.csv")
    assert run("evaluate", "--models", models, "--data", data, "--out", str(workdir / "ev.json")) == 0
    assert set(json.loads((workdir / "ev.json").read_text())["metrics"]) >= {"forest", "ensemble"}
    assert run("predict", "--models", models, "--data", data, "--out", str(workdir / "p.csv")) == 0
    lines = (workdir / "p.csv").read_text().splitlines()
    assert lines[0] == "row,baseline,baseline_tuned,forest,boost,ensemble" and len(lines) == 1501
    assert run("plot-data", "--models", models, "--data", data, "--out", str(workdir / "plots")) == 0
    assert (workdir / "plots").is_dir() and any((workdir / "plots").iterdir())


def test_explain_and_external(workdir):
    models, data = str(workdir / "out" / "models"), str(workdir / "cohort.csv")
    assert run("explain", "--models", models, "--data", data, "--model", "forest", "--records", "3", "--m", "10",
               "--background-size", "50", "--out", str(workdir / "shap")) == 0
    info = json.loads((workdir / "shap" / "explain.json").read_text())
    assert info["records_explained"] == 3 and info["m"] == 10
    assert run("external-validate", "--models", models, "--data", data, "--bootstrap", "20",
               "--out", str(workdir / "ext.json")) == 0
    assert "forest" in json.loads((workdir / "ext.json").read_text())


def test_exit_codes(workdir, tmp_path):
    assert run("ingest-check", str(tmp_path / "missing.csv")) == 10
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    assert run("ingest-check", str(tmp_path / "bad.csv")) == 2
    (tmp_path / "cfg.json").write_text(json.dumps({**SMALL, "version": 7}))
    assert run("train", "--config", str(tmp_path / "cfg.json")) == 4
    assert run("explain", "--models", str(workdir / "out" / "models"), "--data", str(workdir / "cohort.csv"),
               "--m", "0", "--out", str(tmp_path)) == 4
    assert run("evaluate", "--models", str(tmp_path), "--data", str(workdir / "cohort.csv")) == 4
    assert run("no-such-command") == 2


def test_serialize_roundtrip(tmp_path):
    doc = {"a": np.arange(5), "b": {"c": [np.ones((2, 2)), 3]}, "d": "x", "e": np.float64(1.5)}
    save_document(doc, tmp_path / "m.npz")
    back = load_document(tmp_path / "m.npz")
    np.testing.assert_array_equal(back["a"], doc["a"])
    np.testing.assert_array_equal(back["b"]["c"][0], np.ones((2, 2)))
    assert back["b"]["c"][1] == 3 and back["d"] == "x" and back["e"] == 1.5
    np.savez(tmp_path / "other.npz", x=np.zeros(1))
    with pytest.raises(SchemaError):
        load_document(tmp_path / "other.npz")


def test_python_backend_selected_by_environment():
    code = ("from prognostic._kernels import BACKEND; from prognostic.synth import GeneratorConfig, "
            "generate_synthetic; from prognostic.forest import ForestHyperparams, fit_forest, "
            "forest_predict_cohort; c = generate_synthetic(GeneratorConfig(n=400, event_rate=0.1), 0).cohort; "
            "f = fit_forest(c, ForestHyperparams(ntree=3, mtry=3, nodesize=15), 0); "
            "print(BACKEND, repr(float(forest_predict_cohort(f, c, 5.0).sum())))")
    outs = {}
    for backend in ("python", "cython"):
        env = {**os.environ, "PROGNOSTIC_BACKEND": backend}
        outs[backend] = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                                       check=True).stdout.split()
    assert outs["python"][0] == "python" and outs["cython"][0] == "cython"
    assert outs["python"][1] == outs["cython"][1]
