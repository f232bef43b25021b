import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import breslow_nll
from prognostic import metrics
from prognostic.boost import (
    BoostHyperparams, FittedBooster, boost_grid, booster_predict, booster_predict_cohort, breslow_baseline,
    cox_grad_hess, cox_neg_log_partial_likelihood, fit_booster,
)
from prognostic.cohort import PatientRecord
from prognostic.errors import FitError, ValidationError
from prognostic.synth import GeneratorConfig, generate_synthetic


def test_grid_size():
    g = boost_grid()
    assert len(g) == 32 == len(set(g))


def test_invalid_hyperparams():
    with pytest.raises(ValidationError):
        BoostHyperparams(subsample=0.0)


def test_two_record_gradient_and_baseline():
    g, h = cox_grad_hess(np.zeros(2), np.array([1.0, 2.0]), np.array([1, 1]))
    assert list(g) == [-0.5, 0.5]
    t, H0 = breslow_baseline(np.zeros(2), np.array([1.0, 2.0]), np.array([1, 1]))
    assert list(t) == [1.0, 2.0] and list(H0) == [0.5, 1.5]


def test_no_events():
    with pytest.raises(FitError):
        cox_grad_hess(np.zeros(3), np.arange(1.0, 4.0), np.zeros(3))


@given(st.integers(0, 10**6), st.integers(2, 20))
@settings(max_examples=50, deadline=None)
def test_gradient_finite_differences(seed, n):
    rng = np.random.default_rng(seed)
    eta = rng.normal(size=n)
    times = rng.integers(1, 6, n).astype(float)
    events = (rng.random(n) < 0.6).astype(int)
    events[0] = 1
    g, h = cox_grad_hess(eta, times, events)
    assert abs(g.sum()) < 1e-10
    eps = 1e-5
    for i in range(n):
        d = np.zeros(n)
        d[i] = eps
        fd = (breslow_nll(eta + d, times, events) - breslow_nll(eta - d, times, events)) / (2 * eps)
        assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-8)
        # diagonal Hessian against central differences of the gradient
        dg = (cox_grad_hess(eta + d, times, events)[0][i] - cox_grad_hess(eta - d, times, events)[0][i]) / (2 * eps)
        assert h[i] == pytest.approx(dg, rel=1e-6, abs=1e-8)
    assert cox_neg_log_partial_likelihood(eta, times, events) == pytest.approx(breslow_nll(eta, times, events), rel=1e-12)


def test_all_events_equal_eta_n4():
    times = np.array([1.0, 2.0, 3.0, 4.0])
    events = np.ones(4)
    g, _ = cox_grad_hess(np.zeros(4), times, events)
    # risk sets of size 4, 3, 2, 1
    a = np.cumsum([1 / 4, 1 / 3, 1 / 2, 1.0])
    assert np.allclose(g, a - 1.0, atol=1e-15)


@pytest.fixture(scope="module")
def fitted(small_cohort):
    return fit_booster(small_cohort, BoostHyperparams(nrounds=40, max_depth=2), 0)


def test_loss_nonincreasing(fitted):
    loss = np.array(fitted.train_loss)
    assert len(loss) == 41 and np.all(np.diff(loss) <= 1e-9)


def test_baseline_record_and_t0(fitted, small_cohort):
    t = 3.0
    eta = fitted.predict_eta(small_cohort)
    s = booster_predict_cohort(fitted, small_cohort, t)
    assert np.allclose(s, np.exp(-fitted.baseline_chf(t) * np.exp(eta)), rtol=1e-15)
    assert booster_predict(fitted, small_cohort.record(0), 0.0) == 1.0


def test_zero_eta_gives_baseline(small_cohort):
    m = fit_booster(small_cohort, BoostHyperparams(nrounds=1, eta=1e-300), 0)
    s = booster_predict_cohort(m, small_cohort, 4.0)
    assert np.allclose(s, np.exp(-m.baseline_chf(4.0)), rtol=1e-12)


def test_determinism_and_roundtrip(small_cohort, tmp_path):
    hp = BoostHyperparams(nrounds=15, subsample=0.6, colsample_bytree=0.6)
    a = fit_booster(small_cohort, hp, 7)
    b = fit_booster(small_cohort, hp, 7)
    a.save(tmp_path / "a.npz")
    b.save(tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    back = FittedBooster.load(tmp_path / "a.npz")
    assert np.array_equal(booster_predict_cohort(back, small_cohort, 5.0), booster_predict_cohort(a, small_cohort, 5.0))


def test_all_missing_record(fitted):
    assert 0 < booster_predict(fitted, PatientRecord(age=70.0), 5.0) <= 1


def test_noise_auc_near_half():
    coef = {k: 0.0 for k in GeneratorConfig().coefficients}
    cfg = GeneratorConfig(n=3000, coefficients=coef, event_rate=0.15)
    train = generate_synthetic(cfg, 1).cohort
    test = generate_synthetic(cfg, 2).cohort
    m = fit_booster(train, BoostHyperparams(nrounds=100, eta=0.05), 0)
    p = booster_predict_cohort(m, test, 5.0)
    assert abs(metrics.ipcw_auc(-p, test.time, test.event, 5.0) - 0.5) <= 0.05
