from collections import Counter

import numpy as np
import pytest

from prognostic.cohort import COVARIATES
from prognostic.errors import ConfigError, SizingError
from prognostic.rebalance import NUMERIC, RoseConfig, bandwidths, rose_resample
from prognostic.synth import GeneratorConfig, generate_synthetic


@pytest.fixture(scope="module")
def cohort():
    return generate_synthetic(GeneratorConfig(n=4000), 1).cohort


def test_balance(cohort):
    assert abs(cohort.event.mean() - 0.025) < 0.006
    out = rose_resample(cohort, RoseConfig(seed=3))
    assert len(out) == 4000
    assert abs(out.event.mean() - 0.5) <= 3 * np.sqrt(0.25 / 4000)


def test_output_size(cohort):
    assert len(rose_resample(cohort, RoseConfig(size=1234, seed=0))) == 1234


def _row(c, i):
    return tuple((bool(c.present[n][i]), float(c.values[n][i]) if c.present[n][i] else 0.0) for n in COVARIATES)


def test_multiplier_zero_copies_records(cohort):
    out = rose_resample(cohort, RoseConfig(multiplier=0.0, seed=1))
    rows = {_row(cohort, i) + (cohort.time[i], cohort.event[i]) for i in range(len(cohort))}
    assert all(_row(out, i) + (out.time[i], out.event[i]) in rows for i in range(len(out)))


def test_categorical_closure_and_masks(cohort):
    out = rose_resample(cohort, RoseConfig(seed=2))
    for name in ("nodal_stage", "laterality", "grade", "er", "pr", "radiotherapy", "chemotherapy", "trastuzumab"):
        assert set(out.values[name][out.present[name]]) <= set(cohort.values[name][cohort.present[name]])
    masks_in = {tuple(cohort.present[n][i] for n in COVARIATES) for i in range(len(cohort))}
    masks_out = Counter(tuple(out.present[n][i] for n in COVARIATES) for i in range(len(out)))
    assert set(masks_out) <= masks_in


def test_masks_follow_seed_records(cohort):
    # jittering never changes which fields are observed
    a = rose_resample(cohort, RoseConfig(multiplier=0.0, seed=5))
    b = rose_resample(cohort, RoseConfig(multiplier=2.0, seed=5))
    for n in COVARIATES:
        assert np.array_equal(a.present[n], b.present[n])
    assert Counter(tuple(f[0] for f in _row(a, i)) for i in range(len(a))) == Counter(
        tuple(f[0] for f in _row(b, i)) for i in range(len(b)))


def test_numeric_jitter_valid(cohort):
    out = rose_resample(cohort, RoseConfig(seed=4, multiplier=3.0))
    assert np.all(out.values["age"] > 0)
    sz = out.values["size_mm"][out.present["size_mm"]]
    assert np.all(sz > 0)
    nc = out.values["node_count"][out.present["node_count"]]
    assert np.all(nc == np.round(nc)) and np.all(nc >= 0)


def test_plain_bootstrap_moments(cohort):
    p = cohort.event.mean()
    out = rose_resample(cohort, RoseConfig(multiplier=0.0, proportion=p, seed=6))
    age_in, age_out = cohort.values["age"], out.values["age"]
    se = age_in.std() * np.sqrt(2 / len(cohort))
    assert abs(age_out.mean() - age_in.mean()) <= 4 * se
    assert abs(age_out.var() / age_in.var() - 1) <= 0.1


def test_bandwidth_formula(cohort):
    idx = np.flatnonzero(cohort.event == 1)
    h = bandwidths(cohort, idx, 1.0)
    d = len(NUMERIC)
    age = cohort.values["age"][idx]
    assert h["age"] == pytest.approx((4 / ((d + 2) * len(idx))) ** (1 / (d + 4)) * age.std(ddof=1))


def test_single_class(cohort):
    c = cohort.subset(np.flatnonzero(cohort.event == 0))
    with pytest.raises(SizingError):
        rose_resample(c, RoseConfig())


def test_config():
    with pytest.raises(ConfigError):
        RoseConfig(proportion=1.0)
    with pytest.raises(ConfigError):
        RoseConfig(multiplier=-1)
