import numpy as np
import pytest

from oracles import exact_shapley
from prognostic.cohort import COVARIATES, Cohort
from prognostic.errors import ConfigError, UndefinedMetricError
from prognostic.explain import (
    sample_background, shap_cohort, shap_summary, shap_values, write_matrix_csv, write_summary_csv,
)
from prognostic.forest import ForestHyperparams, fit_forest, forest_predict_cohort
from prognostic.synth import GeneratorConfig, generate_synthetic


@pytest.fixture(scope="module")
def observed():
    cfg = GeneratorConfig(n=600, missingness={})
    return generate_synthetic(cfg, 2).cohort


def additive(c):
    return 0.01 * c.column("age") + 0.02 * c.column("size_mm") - 0.05 * c.column("grade")


def test_constant_model_zero(observed):
    r = shap_values(lambda c: np.full(len(c), 0.9), observed.subset([0]), observed, m=50, seed=0)
    assert np.all(r.phi == 0.0)


def test_additive_matches_analytic(observed):
    bg = observed.subset(np.arange(1, 301))
    x = observed.subset([0])
    r = shap_values(additive, x, bg, m=200, seed=1)
    coef = {"age": 0.01, "size_mm": 0.02, "grade": -0.05}
    for j, name in enumerate(COVARIATES):
        exact = coef.get(name, 0.0) * (x.column(name)[0] - bg.column(name).mean())
        assert abs(r.phi[j] - exact) <= 3 * r.se[j] + 1e-15


def test_efficiency_within_se(observed):
    bg = observed.subset(np.arange(1, 301))
    r = shap_values(additive, observed.subset([0]), bg, m=200, seed=2)
    se = additive(bg).std(ddof=1) / np.sqrt(200)
    assert abs(r.phi.sum() - (r.fx - r.base_value)) <= 3 * se


def test_interaction_model_matches_exact_enumeration(observed):
    bg = observed.subset(np.arange(1, 6))

    def f(c):
        return 1e-4 * c.column("age") * c.column("size_mm") + 0.1 * c.column("er") * c.column("grade")

    def f_matrix(M):
        values = {name: M[:, j] for j, name in enumerate(COVARIATES)}
        present = {name: np.ones(len(M), bool) for name in COVARIATES}
        return f(Cohort(values, present, np.ones(len(M)), np.zeros(len(M)), np.arange(len(M))))

    x = observed.subset([0])
    xv = np.array([x.values[n][0] for n in COVARIATES])
    B = np.column_stack([bg.values[n] for n in COVARIATES])
    exact = exact_shapley(f_matrix, xv, B)
    r = shap_values(f, x, bg, m=400, seed=3)
    assert np.all(np.abs(r.phi - exact) <= 3 * r.se + 1e-12)


def test_invalid_composites_redrawn(small_cohort):
    def f(c):
        out = 0.01 * c.column("age")
        out[~c.present["grade"]] = np.nan
        return out

    x_idx = np.flatnonzero(small_cohort.present["grade"])[0]
    r = shap_values(f, small_cohort.subset([x_idx]), small_cohort.subset(np.arange(400)), m=100, seed=0)
    assert r.skipped > 0 and np.all(np.isfinite(r.phi))
    assert r.phi[COVARIATES.index("grade")] == 0.0
    bad = np.flatnonzero(~small_cohort.present["grade"])[0]
    with pytest.raises(UndefinedMetricError):
        shap_values(f, small_cohort.subset([bad]), small_cohort, m=10)


def test_m_validation(observed):
    with pytest.raises(ConfigError):
        shap_values(additive, observed.subset([0]), observed, m=0)


def test_symmetric_roles_similar_importance(observed):
    def f(c):
        return 0.1 * c.column("er") + 0.1 * c.column("pr")

    c = observed.subset(np.arange(len(observed)))
    c.values["pr"] = c.values["er"].copy()
    c.present["pr"] = c.present["er"].copy()
    results = shap_cohort(f, c.subset(np.arange(40)), c.subset(np.arange(100, 400)), m=100, seed=0)
    s = shap_summary(results)
    vals = dict((name, v) for name, v, _ in s.ranking)
    assert abs(vals["er"] - vals["pr"]) <= 0.1 * max(vals["er"], vals["pr"])


def test_single_record_ranking_and_csv(observed, tmp_path):
    r = shap_values(additive, observed.subset([0]), observed, m=50, seed=0)
    s = shap_summary([r])
    order = np.argsort(-np.abs(r.phi), kind="stable")
    assert [name for name, _, _ in s.ranking] == [COVARIATES[j] for j in order]
    write_summary_csv(s, tmp_path / "s.csv")
    write_matrix_csv(s, tmp_path / "m.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "feature,mean_abs_shap,rank"
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 1 + len(COVARIATES)


def test_nodes_dominate_forest_attributions():
    coef = {k: 0.0 for k in GeneratorConfig().coefficients}
    coef["nodal_stage"] = 1.5
    c = generate_synthetic(GeneratorConfig(n=2000, coefficients=coef, event_rate=0.15), 5).cohort
    f = fit_forest(c, ForestHyperparams(ntree=60, mtry=6, nodesize=15), 0)
    model = lambda k: forest_predict_cohort(f, k, 5.0)
    results = shap_cohort(model, c.subset(np.arange(30)), sample_background(c, 200, 0), m=60, seed=0)
    assert shap_summary(results).ranking[0][0] == "nodal_stage"


def test_background_sampling(small_cohort):
    bg = sample_background(small_cohort, 500, 0)
    assert len(bg) == 500 and len(np.unique(bg.ids)) == 500
    assert sample_background(small_cohort.subset(np.arange(10)), 500) is not None
