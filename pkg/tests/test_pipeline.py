import json

import numpy as np
import pytest

from prognostic import pipeline
from prognostic.cohort import SplitTriple
from prognostic.errors import ConfigError, FitError, ValidationError
from prognostic.forest import ForestHyperparams
from prognostic.pipeline import (
    MODELS, ExperimentConfig, ModelSet, _summary, _vote, aggregate, dumps_report, evaluate_predictions,
    external_validate, grid_search, run_experiment, run_seed, write_outputs,
)
from prognostic.synth import GeneratorConfig, generate_synthetic

SMALL = {
    "version": 1,
    "source": {"kind": "synthetic", "generator": {"n": 1500, "event_rate": 0.08}, "seed": 11},
    "forest_grid": {"ntree": [20, 40], "mtry": [3], "nodesize": [15], "splitrule": ["logrank"]},
    "boost_grid": {"eta": [0.1], "max_depth": [2], "subsample": [1.0], "colsample_bytree": [1.0],
                   "lam": [1.0], "nrounds": [30]},
    "seeds": [0, 1],
    "nm_max_evals": 80,
    "bo_evals": 8,
    "bootstrap": 50,
}


@pytest.fixture(scope="module")
def experiment():
    cfg = ExperimentConfig.from_dict(SMALL)
    return cfg, run_experiment(cfg)


def test_vote_example():
    chosen, votes = _vote([500] * 6 + [1000] * 4)
    assert chosen == 500 and votes == {"500": 6, "1000": 4}
    assert _vote([1000, 500])[0] == 500
    assert _vote(["logrank", "logrankscore"], ["logrankscore", "logrank"])[0] == "logrankscore"


def test_single_seed_summary():
    s = _summary([0.0123])
    assert s["median"] == 0.0123 and s["q1"] == s["q3"] == 0.0123
    assert _summary([None])["n"] == 0


def test_weight_averaging():
    base = {"forest": {"best": {"ntree": 500}}, "boost": {"best": {"eta": 0.1}}, "fine_tune": {"params": [0.0]},
            "metrics": {m: {"ici": 0.1, "auc": 0.6, "n_invalid": 0} for m in MODELS},
            "stratified": {s: {m: {"ici": 0.1, "auc": 0.6} for m in MODELS} for s in ("valid", "invalid")}}
    r1 = {**base, "weights": {"baseline": 0.6, "forest": 0.3, "boost": 0.1}}
    r2 = {**base, "weights": {"baseline": 0.4, "forest": 0.3, "boost": 0.3}}
    w = aggregate([r1, r2])["ensemble_weights"]
    assert w == pytest.approx({"baseline": 0.5, "forest": 0.3, "boost": 0.2}, abs=1e-15)


def test_single_point_grid(small_cohort):
    split = pipeline.split_cohort(small_cohort, 0)
    hp = ForestHyperparams(ntree=10, mtry=3, nodesize=15)
    g = grid_search("forest", [hp], split.train_a, split.test_b)
    assert g.best == hp and g.n_evaluated == 1


def test_failing_grid_raises(small_cohort):
    split = pipeline.split_cohort(small_cohort, 0)
    censored = split.train_a.subset(np.flatnonzero(split.train_a.event == 0))
    with pytest.raises(FitError):
        grid_search("forest", [ForestHyperparams(ntree=5, mtry=3, nodesize=15)], censored, split.test_b)
    with pytest.raises(ConfigError):
        grid_search("forest", [], split.train_a, split.test_b)


def test_leakage_assertion(monkeypatch, small_cohort):
    real = pipeline.split_cohort

    def leaky(c, seed):
        s = real(c, seed)
        ic = np.concatenate([s.index_c, s.index_a[:1]])
        return SplitTriple(s.train_a, s.test_b, c.subset(ic), seed, s.index_a, s.index_b, ic)

    monkeypatch.setattr(pipeline, "split_cohort", leaky)
    cfg = ExperimentConfig.from_dict(SMALL)
    with pytest.raises(ValidationError, match="leakage"):
        run_seed(cfg, small_cohort, 0)


def test_experiment_report(experiment):
    cfg, (report, final, results) = experiment
    assert [r["seed"] for r in results] == [0, 1]
    assert report["config_hash"] == cfg.config_hash()
    assert set(report["summary"]) == set(MODELS)
    assert report["hyperparameters"]["forest"]["ntree"]["chosen"] in (20, 40)
    assert sum(report["ensemble_weights"].values()) == pytest.approx(1.0)
    for r in results:
        assert r["metrics"]["forest"]["n_invalid"] == 0 and r["metrics"]["boost"]["n_invalid"] == 0
        assert r["fine_tune"]["final"] <= r["fine_tune"]["initial"]


def test_deterministic_report(experiment):
    cfg, (report, _, _) = experiment
    again, _, _ = run_experiment(ExperimentConfig.from_dict(SMALL))
    assert dumps_report(report) == dumps_report(again)


def test_outputs_and_model_roundtrip(experiment, tmp_path, small_cohort):
    cfg, (report, final, results) = experiment
    write_outputs(report, final, results, tmp_path)
    assert json.loads((tmp_path / "report.json").read_text())["config_hash"] == cfg.config_hash()
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert header == "seed,stratum,model,metric,value,n,n_invalid"
    assert (tmp_path / "plots").is_dir()
    loaded = ModelSet.load(tmp_path / "models")
    a, b = final.predict(small_cohort, 5.0), loaded.predict(small_cohort, 5.0)
    for m in MODELS:
        np.testing.assert_array_equal(a[m], b[m])


def test_external_validation(experiment):
    _, (_, final, _) = experiment
    gen = ExperimentConfig.from_dict(SMALL).source["generator"]
    same = generate_synthetic(GeneratorConfig(**gen), 99).cohort
    res = external_validate(final, same, 5.0, B=50, seed=0)
    for m in MODELS:
        for k in ("ici", "auc"):
            e = res[m][k]
            if e["value"] is not None:
                assert e["lo"] <= e["value"] <= e["hi"]
    # about one and a half times the hazard at this event rate
    shifted = generate_synthetic(GeneratorConfig(**{**gen, "event_rate": 0.12}), 99).cohort
    res_s = external_validate(final, shifted, 5.0, B=20, seed=0)
    for m in MODELS:
        assert res_s[m]["ici"]["value"] > res[m]["ici"]["value"]


def test_evaluate_predictions_invalid_and_undefined():
    out = evaluate_predictions(np.array([np.nan, 0.9, 0.8]), np.array([1.0, 6.0, 6.0]), np.array([1, 0, 0]), 5.0)
    assert out["n_invalid"] == 1 and out["auc"] is None


def test_config_validation_and_hash(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "version": 2})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "objective": "brier"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "seeds": [1, 1]})
    a = ExperimentConfig.from_dict(SMALL)
    assert a.config_hash() == ExperimentConfig.from_dict({**SMALL, "jobs": 4, "out_dir": "x"}).config_hash()
    assert a.config_hash() != ExperimentConfig.from_dict({**SMALL, "objective": "auc"}).config_hash()
    assert len(a.forest_points()) == 2 and len(a.boost_points()) == 1
    assert ExperimentConfig.from_dict({**SMALL, "seeds": 3}).seeds == [0, 1, 2]
    p = tmp_path / "c.json"
    p.write_text(json.dumps(SMALL))
    assert ExperimentConfig.load(p).config_hash() == a.config_hash()
