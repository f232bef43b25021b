"""Gradient-boosted trees on the Cox partial likelihood.

Scores are turned into survival probabilities with a Breslow baseline
hazard estimated on the training fold, ``S(t|x) = exp(-H0(t) exp(eta(x)))``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .cohort import Cohort, PatientRecord
from .errors import FitError, ValidationError
from .features import BinMapper, EncoderSpec, encode_cohort
from .serialize import load_document, save_document
from .trees import TreeTable

MODEL_VERSION = 1
BOOST_GRID = {
    "eta": (0.05, 0.1),
    "max_depth": (2, 5),
    "subsample": (0.6, 1.0),
    "colsample_bytree": (0.6, 1.0),
    "lam": (0.05, 0.1),
}


@dataclass(frozen=True)
class BoostHyperparams:
    eta: float = 0.1
    max_depth: int = 2
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    lam: float = 0.1
    nrounds: int = 500
    min_child_weight: float = 1.0
    max_bins: int = 32

    def __post_init__(self):
        if not (0 < self.subsample <= 1 and 0 < self.colsample_bytree <= 1):
            raise ValidationError("subsample and colsample_bytree must lie in (0, 1]")
        if self.eta <= 0 or self.lam < 0 or self.max_depth < 1 or self.nrounds < 1:
            raise ValidationError("invalid boosting hyperparameters")

    def capacity_key(self):
        return (self.max_depth, self.eta, self.subsample, self.colsample_bytree, -self.lam)


def boost_grid(nrounds=500):
    return [
        BoostHyperparams(eta=e, max_depth=d, subsample=s, colsample_bytree=c, lam=l, nrounds=nrounds)
        for e in BOOST_GRID["eta"]
        for d in BOOST_GRID["max_depth"]
        for s in BOOST_GRID["subsample"]
        for c in BOOST_GRID["colsample_bytree"]
        for l in BOOST_GRID["lam"]
    ]


def _risk_sums(eta, times, events):
    """Sorted-order pieces of the Breslow likelihood.

    Returns the time order, per-record exp(eta - shift), the shift, and for
    each record (sorted) the index of the first record tied with it.
    """
    order = np.argsort(times, kind="stable")
    t = times[order]
    shift = float(np.max(eta))
    w = np.exp(eta[order] - shift)
    S = np.cumsum(w[::-1])[::-1]
    first = np.searchsorted(t, t, side="left")
    return order, t, w, shift, S[first]


def cox_grad_hess(eta, times, events):
    """Gradient and diagonal Hessian of the Breslow negative log partial likelihood in eta."""
    eta = np.asarray(eta, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    if events.sum() == 0:
        raise FitError("Cox gradient undefined without events")
    order, t, w, shift, S_at = _risk_sums(eta, times, events)
    e = events[order]
    # contributions d_k / S_k accumulated over event times <= T_i (ties included)
    a = np.where(e == 1, 1.0 / S_at, 0.0)
    b = np.where(e == 1, 1.0 / S_at**2, 0.0)
    A = np.cumsum(a)
    B = np.cumsum(b)
    last = np.searchsorted(t, t, side="right") - 1
    A, B = A[last], B[last]
    g = np.empty_like(eta)
    h = np.empty_like(eta)
    g[order] = w * A - e
    h[order] = w * A - w * w * B
    return g, h


def cox_neg_log_partial_likelihood(eta, times, events) -> float:
    eta = np.asarray(eta, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    order, t, w, shift, S_at = _risk_sums(eta, times, events)
    e = events[order] == 1
    return float(-np.sum(eta[order][e] - shift - np.log(S_at[e])))


def breslow_baseline(eta, times, events):
    """Event times and the Breslow cumulative baseline hazard at each."""
    eta = np.asarray(eta, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    order = np.argsort(times, kind="stable")
    t = times[order]
    e = events[order]
    w = np.exp(eta[order])
    S = np.cumsum(w[::-1])[::-1]
    ev_times, first = np.unique(t[e == 1], return_index=True)
    d = np.diff(np.append(first, int(e.sum())))
    at_risk = S[np.searchsorted(t, ev_times, side="left")]
    return ev_times, np.cumsum(d / at_risk)


@dataclass
class FittedBooster:
    hp: BoostHyperparams
    seed: int
    encoder: EncoderSpec
    bins: BinMapper
    trees: TreeTable
    h0_times: np.ndarray
    h0: np.ndarray
    train_loss: list = field(default_factory=list)

    def codes(self, cohort: Cohort):
        return self.bins.transform(encode_cohort(cohort, self.encoder))

    def predict_eta(self, cohort: Cohort, codes=None) -> np.ndarray:
        leaves = self.trees.apply(self.codes(cohort) if codes is None else codes)
        vals = self.trees.extra["value"][leaves]
        return np.cumsum(vals, axis=1)[:, -1] if vals.shape[1] else np.zeros(len(vals))

    def baseline_chf(self, t) -> float:
        i = np.searchsorted(self.h0_times, t, side="right")
        return float(self.h0[i - 1]) if i > 0 else 0.0

    def to_dict(self, lists=True):
        conv = (lambda a: a.tolist()) if lists else (lambda a: a)
        return {
            "model": "cox_boosted_trees",
            "version": MODEL_VERSION,
            "hyperparams": asdict(self.hp),
            "seed": self.seed,
            "encoder": self.encoder.to_dict(),
            "bins": self.bins.to_dict(),
            "trees": self.trees.to_dict(lists),
            "h0_times": conv(self.h0_times),
            "h0": conv(self.h0),
            "train_loss": list(self.train_loss),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("model") != "cox_boosted_trees" or d.get("version") != MODEL_VERSION:
            raise ValidationError("not a version-1 boosted-tree document")
        return cls(
            BoostHyperparams(**d["hyperparams"]),
            d["seed"],
            EncoderSpec.from_dict(d["encoder"]),
            BinMapper.from_dict(d["bins"]),
            TreeTable.from_dict(d["trees"], {"value": float}),
            np.asarray(d["h0_times"], dtype=float),
            np.asarray(d["h0"], dtype=float),
            list(d.get("train_loss", [])),
        )

    def save(self, path):
        save_document(self.to_dict(lists=False), path)

    @classmethod
    def load(cls, path):
        return cls.from_dict(load_document(path))


def fit_booster(train: Cohort, hp: BoostHyperparams, seed: int, encoder: EncoderSpec = None) -> FittedBooster:
    if train.n_events < 2:
        raise FitError("boosting needs at least 2 events")
    encoder = encoder or EncoderSpec.fit(train)
    X = encode_cohort(train, encoder)
    bins = BinMapper.fit(X, hp.max_bins)
    codes = np.ascontiguousarray(bins.transform(X))
    nbins = np.array([len(e) for e in bins.edges], dtype=np.int32)
    n, p = codes.shape
    times = train.time.astype(float)
    events = train.event.astype(float)
    rng = np.random.default_rng(seed)
    n_rows = max(1, int(round(hp.subsample * n)))
    n_cols = max(1, int(round(hp.colsample_bytree * p)))

    eta = np.zeros(n)
    trees = []
    losses = [cox_neg_log_partial_likelihood(eta, times, events)]
    for _ in range(hp.nrounds):
        g, h = cox_grad_hess(eta, times, events)
        rows = np.arange(n) if n_rows == n else np.sort(rng.choice(n, n_rows, replace=False))
        cols = np.arange(p) if n_cols == p else np.sort(rng.choice(p, n_cols, replace=False))
        tr = _kernels.grow_boost_tree(codes, nbins, rows, g, h, cols.astype(np.int32), hp.max_depth,
                                      hp.lam, hp.min_child_weight, hp.eta)
        leaves = _kernels.apply_trees(codes, tr["feature"], tr["cut"], tr["missing_left"], tr["left"],
                                      tr["right"], np.zeros(1, dtype=np.int64))[:, 0]
        eta = eta + tr["value"][leaves]
        trees.append(tr)
        losses.append(cox_neg_log_partial_likelihood(eta, times, events))
    table = TreeTable.from_trees(trees, ("value",))
    h0_times, h0 = breslow_baseline(eta, times, events)
    return FittedBooster(hp, int(seed), encoder, bins, table, h0_times, h0, losses)


def booster_predict_cohort(m: FittedBooster, cohort: Cohort, t: float, codes=None) -> np.ndarray:
    if t <= 0:
        return np.ones(len(cohort))
    eta = m.predict_eta(cohort, codes)
    return np.exp(-m.baseline_chf(t) * np.exp(eta))


def booster_predict(m: FittedBooster, r: PatientRecord, t: float) -> float:
    c = Cohort.from_records([r], horizon=max(5.0, r.time))
    return float(booster_predict_cohort(m, c, t)[0])
