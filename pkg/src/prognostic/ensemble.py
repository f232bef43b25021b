"""Convex combination of baseline, forest and booster survival probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import metrics
from .errors import UndefinedMetricError, ValidationError
from .optimize import BOConfig, bayes_opt_maximize

COMPONENTS = ("baseline", "forest", "boost")


@dataclass(frozen=True)
class EnsembleWeights:
    w_baseline: float
    w_forest: float
    w_boost: float

    def __post_init__(self):
        w = self.as_array()
        if np.any(w < -1e-12) or np.any(w > 1 + 1e-12) or abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError(f"weights must be a convex combination, got {tuple(w)}")

    def as_array(self):
        return np.array([self.w_baseline, self.w_forest, self.w_boost], dtype=float)

    @classmethod
    def from_stick(cls, u, v):
        """Stick-breaking map from the unit square onto the simplex."""
        return cls(float(u), float((1 - u) * v), float((1 - u) * (1 - v)))

    @classmethod
    def normalised(cls, w):
        w = np.clip(np.asarray(w, dtype=float), 0.0, None)
        return cls(*(float(v) for v in w / w.sum()))

    def to_dict(self):
        return {"baseline": self.w_baseline, "forest": self.w_forest, "boost": self.w_boost}


def combine_arrays(preds, w: EnsembleWeights) -> np.ndarray:
    """Row-wise weighted mean over valid (non-NaN) components, renormalised per row.

    ``preds`` has one column per component in the order baseline, forest,
    boost. Rows where every component with positive weight is invalid fall
    back to the unweighted mean of the valid components; rows with no valid
    component raise.
    """
    P = np.asarray(preds, dtype=float)
    if P.ndim == 1:
        P = P[None, :]
    valid = ~np.isnan(P)
    if not valid.any(axis=1).all():
        raise ValidationError("every component prediction is invalid for some record")
    wa = w.as_array()
    W = np.where(valid, wa, 0.0)
    mass = W.sum(axis=1)
    zero = mass <= 0
    W[zero] = valid[zero].astype(float)
    mass = W.sum(axis=1)
    return (np.where(valid, P, 0.0) * W).sum(axis=1) / mass


def combine(preds, w: EnsembleWeights):
    """Combine per-model :class:`SurvivalPrediction` objects (or floats/None)."""
    from .baseline import SurvivalPrediction

    vals = []
    for p in preds:
        if isinstance(p, SurvivalPrediction):
            vals.append(p.prob if p.valid else np.nan)
        else:
            vals.append(np.nan if p is None else float(p))
    prob = float(combine_arrays(np.array(vals), w)[0])
    return SurvivalPrediction(prob, 1, [], "ensemble")


def objective_value(preds, times, events, t, objective):
    if objective == "ici":
        return metrics.ici(preds, times, events, t)
    if objective == "auc":
        return metrics.ipcw_auc(-np.asarray(preds), times, events, t)
    raise ValidationError(f"unknown objective {objective!r}")


def score(preds, times, events, t, objective):
    """Larger is better: negative ICI or AUC."""
    v = objective_value(preds, times, events, t, objective)
    return -v if objective == "ici" else v


VERTICES = ((1.0, 0.0), (0.0, 1.0), (0.0, 0.0), (1.0 / 3.0, 0.5))


@dataclass
class WeightSearch:
    weights: EnsembleWeights
    objective: float
    evaluations: list  # (weights, objective) in evaluation order


def search_weights(component_preds, times, events, objective="ici", t=5.0, bo_cfg: BOConfig = None):
    """Bayesian optimisation of the weights on a tuning set.

    ``component_preds`` is an (n, 3) array with NaN for invalid baseline
    predictions. The three vertices and the centroid are always evaluated.
    """
    P = np.asarray(component_preds, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    if int(np.sum(events)) == 0:
        raise UndefinedMetricError("no events in the tuning set")
    cfg = bo_cfg or BOConfig(dim=2)
    evaluations = []

    def f(x):
        w = EnsembleWeights.from_stick(x[0], x[1])
        try:
            s = score(combine_arrays(P, w), times, events, t, objective)
        except UndefinedMetricError:
            s = -math.inf
        evaluations.append((w, s))
        return s

    res = bayes_opt_maximize(f, cfg, initial_points=[np.array(v) for v in VERTICES])
    if not math.isfinite(res.fun):
        raise UndefinedMetricError("ensemble objective undefined at every evaluated weight")
    w = EnsembleWeights.from_stick(res.x[0], res.x[1])
    value = -res.fun if objective == "ici" else res.fun
    return WeightSearch(w, value, evaluations)
