import numpy as np
import pytest
from hypothesis import given, strategies as st

from prognostic.cohort import PatientRecord
from prognostic.errors import DomainError
from prognostic.features import BinMapper, EncoderSpec, bernstein_basis, encode, encode_cohort, source_field


def test_bernstein_examples():
    assert list(bernstein_basis(0.0)) == [1, 0, 0, 0]
    assert list(bernstein_basis(1.0)) == [0, 0, 0, 1]
    assert list(bernstein_basis(0.5)) == [0.125, 0.375, 0.375, 0.125]


@given(st.floats(0, 1), st.integers(1, 6))
def test_bernstein_partition_of_unity(x, deg):
    b = bernstein_basis(x, deg)
    assert len(b) == deg + 1 and np.all(b >= 0) and b.sum() == pytest.approx(1.0)


def test_bernstein_domain():
    with pytest.raises(DomainError):
        bernstein_basis(1.2)


def test_encoder_blocks(small_cohort):
    spec = EncoderSpec.fit(small_cohort)
    assert len(spec.names) == 32
    assert len(EncoderSpec.fit(small_cohort, bernstein=False).names) == 26
    lo = spec.mins["age"]
    fv = encode(PatientRecord(age=lo), spec)
    assert list(fv.values[:4]) == [1, 0, 0, 0]
    assert np.all(np.isnan(fv.values[4:8]))  # size missing: whole block missing
    hi = encode(PatientRecord(age=spec.maxs["age"] + 30), spec)
    assert list(hi.values[:4]) == [0, 0, 0, 1]


def test_missing_indicators(small_cohort):
    spec = EncoderSpec.fit(small_cohort)
    X = encode_cohort(small_cohort, spec)
    names = spec.names
    j = names.index("grade=missing")
    assert np.array_equal(X[:, j] == 1, ~small_cohort.present["grade"])
    assert np.array_equal(X[:, names.index("radiotherapy=missing")] == 1, ~small_cohort.present["radiotherapy"])


def test_source_field():
    assert source_field("age_b2") == "age"
    assert source_field("grade=3") == "grade"
    assert source_field("er=missing") == "er"
    assert source_field("node_count") == "node_count"
    assert source_field("chemotherapy") == "chemotherapy"


def test_binmapper_codes():
    X = np.array([[1.0], [2.0], [3.0], [np.nan]])
    bm = BinMapper.fit(X, 32)
    assert list(bm.transform(X)[:, 0]) == [0, 1, 2, 255]
    # unseen values clip into the last bin
    assert bm.transform(np.array([[99.0]]))[0, 0] == 2
    assert BinMapper.from_dict(bm.to_dict()).edges[0].tolist() == [1, 2, 3]


def test_binmapper_quantiles():
    X = np.random.default_rng(0).normal(size=(1000, 1))
    bm = BinMapper.fit(X, 16)
    codes = bm.transform(X)[:, 0]
    assert codes.max() == 15 and np.bincount(codes).min() > 40
