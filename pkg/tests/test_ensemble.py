import numpy as np
import pytest

from prognostic import metrics
from prognostic.baseline import SurvivalPrediction
from prognostic.ensemble import VERTICES, EnsembleWeights, combine, combine_arrays, search_weights
from prognostic.errors import ValidationError
from prognostic.optimize import BOConfig, grid_maximize
from prognostic.synth import GeneratorConfig, generate_synthetic


def test_degenerate_weight():
    p = combine([SurvivalPrediction(0.93, 1, []), 0.5, 0.4], EnsembleWeights(1, 0, 0))
    assert p.prob == 0.93 and p.model_tag == "ensemble"


def test_fallback_renormalisation():
    p = combine([SurvivalPrediction(None, 0, ["grade"]), 0.9, 0.8], EnsembleWeights(0.5, 0.3, 0.2))
    assert p.prob == pytest.approx(0.86, abs=1e-15)
    assert combine_arrays([[np.nan, 0.9, 0.8]], EnsembleWeights(0.5, 0.3, 0.2))[0] == pytest.approx(0.86, abs=1e-15)


def test_zero_mass_falls_back_to_valid_mean():
    assert combine_arrays([[np.nan, 0.9, 0.7]], EnsembleWeights(1, 0, 0))[0] == pytest.approx(0.8)


def test_convexity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = EnsembleWeights.normalised(rng.random(3))
        assert combine_arrays([[0.42, 0.42, 0.42]], w)[0] == pytest.approx(0.42, abs=1e-15)


def test_weight_validation():
    with pytest.raises(ValidationError):
        EnsembleWeights(0.5, 0.6, 0.1)
    with pytest.raises(ValidationError):
        EnsembleWeights(-0.1, 0.6, 0.5)
    w = EnsembleWeights.from_stick(0.2, 0.5)
    assert sum(w.to_dict().values()) == pytest.approx(1.0)
    assert [EnsembleWeights.from_stick(*v).as_array().tolist() for v in VERTICES[:3]] == [
        [1, 0, 0], [0, 1, 0], [0, 0, 1]]


@pytest.fixture(scope="module")
def tuning():
    sc = generate_synthetic(GeneratorConfig(n=3000), 4)
    rng = np.random.default_rng(1)
    c = sc.cohort
    noise = [rng.uniform(0.85, 1.0, len(c)), rng.uniform(0.85, 1.0, len(c))]
    return sc, c, np.column_stack([noise[0], sc.true_survival, noise[1]])


def test_oracle_component_wins(tuning):
    sc, c, P = tuning
    ws = search_weights(P, c.time, c.event, "ici", 5.0, BOConfig(dim=2, n_eval=30, seed=0))
    assert ws.weights.w_forest >= 0.8
    for w, v in ws.evaluations[:3]:
        assert ws.objective <= -v + 1e-15  # no worse than any vertex


def test_identical_components_match_grid_oracle(tuning):
    sc, c, P = tuning
    P2 = np.column_stack([P[:, 1], P[:, 1], P[:, 0]])
    ws = search_weights(P2, c.time, c.event, "ici", 5.0, BOConfig(dim=2, n_eval=30, seed=0))

    def f(x):
        return -metrics.ici(combine_arrays(P2, EnsembleWeights.from_stick(*x)), c.time, c.event, 5.0)

    _, best = grid_maximize(f, [(0, 1), (0, 1)], 0.05)
    assert ws.objective <= -best + 0.002


def test_search_deterministic(tuning):
    sc, c, P = tuning
    a = search_weights(P, c.time, c.event, "auc", 5.0, BOConfig(dim=2, n_eval=12, seed=3))
    b = search_weights(P, c.time, c.event, "auc", 5.0, BOConfig(dim=2, n_eval=12, seed=3))
    assert a.weights == b.weights
