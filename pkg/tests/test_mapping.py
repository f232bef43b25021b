import numpy as np
import pytest

from prognostic.cohort import Cohort, PatientRecord
from prognostic.errors import ConfigError
from prognostic.mapping import MappingProfile, contradictions, load_profile, map_cohort, map_to_baseline_input

MA27 = load_profile("ma27")


def rec(**kw):
    base = dict(age=60.0, er=1, pr=1, size_mm=15.0, grade=2, radiotherapy=1, chemotherapy=0, trastuzumab=0)
    base.update(kw)
    return PatientRecord(**base)


def test_stage_to_nodes():
    assert map_to_baseline_input(rec(nodal_stage="N1"), MA27).nodes == 2.0
    assert [map_to_baseline_input(rec(nodal_stage=s), MA27).nodes for s in ("N0", "N2", "N3")] == [0, 7, 10]


def test_node_count_takes_precedence():
    assert map_to_baseline_input(rec(nodal_stage="N1", node_count=4), MA27).nodes == 4.0


def test_detection_and_heart_dose():
    x = map_to_baseline_input(rec(age=60.0, radiotherapy=1, laterality="left"), MA27)
    assert (x.detection_mode, x.heart_dose_gy) == (0.5, 2.0)
    assert map_to_baseline_input(rec(age=80.0), MA27).detection_mode == 0.0
    assert map_to_baseline_input(rec(laterality="right"), MA27).heart_dose_gy == 0.0
    assert map_to_baseline_input(rec(laterality=None), MA27).heart_dose_gy == 1.0


def test_fixed_defaults_and_regimens():
    x = map_to_baseline_input(rec(chemotherapy=1, trastuzumab=1), MA27)
    assert (x.smoker, x.hormone_tx, x.bisphosphonate_tx, x.year_dx, x.her2) == (0, 1, 0, 2003, 1)
    assert x.chemo_regimen == "taxane_or_highdose"
    team = map_to_baseline_input(rec(chemotherapy=1), load_profile("team"))
    assert team.chemo_regimen == "standard_anthracycline"


def test_missing_mandatory_propagates():
    x = map_to_baseline_input(rec(grade=None, size_mm=None), MA27)
    assert x.grade is None and x.size_mm is None


def test_vectorised_matches_scalar(small_cohort):
    table = map_cohort(small_cohort.subset(np.arange(50)), MA27)
    for i in range(50):
        assert table.row(i) == map_to_baseline_input(small_cohort.record(i), MA27)


def test_contradictions_flagged():
    x = map_to_baseline_input(rec(radiotherapy=0, laterality="left"), MA27)
    assert contradictions(x) == []
    x = x.__class__(**{**x.__dict__, "trastuzumab_tx": 1, "her2": 0})
    assert "trastuzumab_without_her2" in contradictions(x)


def test_profile_validation(tmp_path):
    with pytest.raises(ConfigError):
        MappingProfile.from_dict({"name": "x"})
    with pytest.raises(ConfigError):
        MappingProfile(name="x", chemo_regimen="none")
    p = tmp_path / "p.json"
    import json

    p.write_text(json.dumps(MA27.to_dict()))
    assert load_profile(str(p)) == MA27
