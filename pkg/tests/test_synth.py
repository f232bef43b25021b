import dataclasses

import numpy as np
import pytest

from prognostic.baseline import validity_mask
from prognostic.errors import ConfigError
from prognostic.mapping import load_profile, map_cohort
from prognostic.synth import GeneratorConfig, expected_event_fraction, generate_synthetic


def test_event_rate_target():
    c = generate_synthetic(GeneratorConfig(), 0).cohort
    assert len(c) == 7563
    assert abs(c.event.mean() - 0.025) <= 0.005


def test_zero_coefficients_flat_truth():
    coef = {k: 0.0 for k in GeneratorConfig().coefficients}
    sc = generate_synthetic(GeneratorConfig(n=300, coefficients=coef), 1)
    assert np.ptp(sc.true_survival) == 0.0


def test_deterministic(tmp_path):
    a = generate_synthetic(GeneratorConfig(n=500), 4).cohort
    b = generate_synthetic(GeneratorConfig(n=500), 4).cohort
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_missingness_rates_and_invalid_fraction():
    cfg = GeneratorConfig(n=20000)
    c = generate_synthetic(cfg, 2).cohort
    for name, rate in cfg.missingness.items():
        assert abs((1 - c.present[name].mean()) - rate) < 0.015
    invalid = 1 - validity_mask(map_cohort(c, load_profile("ma27"))).mean()
    # the mandatory set includes radiotherapy, missing in 28.9% of records
    assert 0.2 <= invalid <= 0.3


def test_times_within_horizon():
    c = generate_synthetic(GeneratorConfig(n=3000), 3).cohort
    assert np.all(c.time > 0) and np.all(c.time <= 5.0)
    assert np.all(c.time[c.event == 0] <= 5.0)


def test_expected_fraction_matches_simulation():
    cfg = GeneratorConfig(n=40000, event_rate=0.1)
    sc = generate_synthetic(cfg, 8)
    assert abs(sc.cohort.event.mean() - 0.1) < 0.006


def test_expected_fraction_no_censoring():
    lam = np.array([0.1, 0.2])
    got = expected_event_fraction(lambda t: lam * t, 5.0, 0.0)
    assert got == pytest.approx(np.mean(1 - np.exp(-lam * 5)), rel=1e-12)


def test_baseline_mode_truth_matches_params():
    from prognostic.baseline import predict_table

    sc = generate_synthetic(GeneratorConfig(n=400, mode="baseline"), 6)
    full = dataclasses.replace(sc.cohort, present={k: np.ones(400, bool) for k in sc.cohort.present})
    prob, _ = predict_table(sc.params, map_cohort(full, load_profile("ma27")), 5.0)
    assert np.allclose(prob, sc.true_survival, rtol=1e-12)


@pytest.mark.parametrize("bad", [
    {"n": 0}, {"mode": "other"}, {"event_rate": 1.5}, {"censoring_rate": -0.1},
    {"missingness": {"grade": 1.2}}, {"missingness": {"age": 0.1}}, {"coefficients": {"zzz": 1.0}},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        GeneratorConfig(**bad)


def test_config_needs_version(tmp_path):
    with pytest.raises(ConfigError):
        GeneratorConfig.from_dict({"n": 10})
    d = GeneratorConfig(n=10).to_dict()
    assert GeneratorConfig.from_dict(d) == GeneratorConfig(n=10)
