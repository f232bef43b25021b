"""Monte Carlo permutation SHAP over patient-record fields.

Each draw picks a random feature order and a random background record and
walks the chain of composites from the background record to ``x``, switching
one field at a time; the change in predicted survival at each switch is that
field's contribution for the draw. Missing values travel with their field.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .cohort import COVARIATES, Cohort, PatientRecord
from .errors import ConfigError, UndefinedMetricError

DEFAULT_M = 200
DEFAULT_BACKGROUND = 500


@dataclass
class ShapResult:
    features: tuple
    phi: np.ndarray
    se: np.ndarray
    base_value: float
    fx: float
    m: int
    skipped: int = 0
    values: dict = field(default_factory=dict)  # the explained record's field values


def sample_background(cohort: Cohort, size: int = DEFAULT_BACKGROUND, seed: int = 0) -> Cohort:
    n = len(cohort)
    if n <= size:
        return cohort
    idx = np.sort(np.random.default_rng(seed).choice(n, size, replace=False))
    return cohort.subset(idx)


def _composites(x: Cohort, bg: Cohort, perms, rows):
    """Cohort of chained composites: draw d, step k takes perm[d][:k] from x."""
    m, p = perms.shape
    steps = p + 1
    total = m * steps
    # from_x[d*steps + k, j] is True when feature j comes from x at step k of draw d
    rank = np.empty_like(perms)
    np.put_along_axis(rank, perms, np.arange(p)[None, :].repeat(m, 0), axis=1)
    k = np.arange(steps)
    from_x = rank[:, None, :] < k[None, :, None]
    from_x = from_x.reshape(total, p)
    src = np.repeat(rows, steps)
    values, present = {}, {}
    for j, name in enumerate(COVARIATES):
        values[name] = np.where(from_x[:, j], x.values[name][0], bg.values[name][src])
        present[name] = np.where(from_x[:, j], x.present[name][0], bg.present[name][src])
    return Cohort(values, present, np.ones(total), np.zeros(total), np.arange(total), x.horizon)


def shap_values(f: Callable, x, background: Cohort, m: int = DEFAULT_M, seed: int = 0,
                max_redraws: int = 50) -> ShapResult:
    """Permutation-sampling SHAP of ``f`` (Cohort -> survival array, NaN = invalid) at ``x``.

    Draws whose chain hits an invalid composite are redrawn; the number of
    such redraws is reported in ``skipped``.
    """
    if m < 1:
        raise ConfigError("m must be at least 1")
    if len(background) == 0:
        raise ConfigError("background must be nonempty")
    if isinstance(x, PatientRecord):
        x = Cohort.from_records([x], horizon=max(background.horizon, x.time))
    p = len(COVARIATES)
    rng = np.random.default_rng(seed)
    fx = float(f(x)[0])
    if np.isnan(fx):
        raise UndefinedMetricError("the model gives no valid prediction for this record")

    contrib = np.zeros((m, p))
    todo = np.arange(m)
    skipped = 0
    for _ in range(max_redraws + 1):
        perms = np.array([rng.permutation(p) for _ in todo]).reshape(len(todo), p)
        rows = rng.integers(0, len(background), len(todo))
        out = np.asarray(f(_composites(x, background, perms, rows)), dtype=float)
        out = out.reshape(len(todo), p + 1)
        bad = np.isnan(out).any(axis=1)
        steps = np.diff(out, axis=1)  # step k switches feature perms[:, k]
        good = ~bad
        for d in np.flatnonzero(good):
            contrib[todo[d], perms[d]] = steps[d]
        skipped += int(bad.sum())
        todo = todo[bad]
        if len(todo) == 0:
            break
    if len(todo):
        raise UndefinedMetricError(f"{len(todo)} draws stayed invalid after {max_redraws} redraws")

    bvals = np.asarray(f(background), dtype=float)
    base = float(np.nanmean(bvals)) if np.any(~np.isnan(bvals)) else float("nan")
    phi = contrib.mean(axis=0)
    se = contrib.std(axis=0, ddof=1) / np.sqrt(m) if m > 1 else np.full(p, np.nan)
    rec = x.record(0)
    return ShapResult(COVARIATES, phi, se, base, fx, m, skipped,
                      {name: getattr(rec, name) for name in COVARIATES})


def shap_cohort(f: Callable, cohort: Cohort, background: Cohort, m: int = DEFAULT_M, seed: int = 0,
                skip_invalid: bool = True):
    """SHAP for every record; records without a valid prediction are skipped when asked."""
    out = []
    for i in range(len(cohort)):
        try:
            out.append(shap_values(f, cohort.subset([i]), background, m, seed + i))
        except UndefinedMetricError:
            if not skip_invalid:
                raise
    return out


@dataclass
class ShapSummary:
    ranking: list  # (feature, mean_abs_shap, rank), most important first
    matrix: np.ndarray  # (records, features) phi
    values: list  # per-record field values, for colouring a beeswarm
    features: tuple


def shap_summary(results) -> ShapSummary:
    results = list(results)
    if not results:
        raise ConfigError("no SHAP results to summarise")
    features = results[0].features
    M = np.vstack([r.phi for r in results])
    mean_abs = np.abs(M).mean(axis=0)
    order = np.argsort(-mean_abs, kind="stable")
    ranking = [(features[j], float(mean_abs[j]), r + 1) for r, j in enumerate(order)]
    return ShapSummary(ranking, M, [r.values for r in results], features)


def write_summary_csv(summary: ShapSummary, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "mean_abs_shap", "rank"])
        for name, v, r in summary.ranking:
            w.writerow([name, repr(v), r])


def write_matrix_csv(summary: ShapSummary, path):
    """Long format: one row per (record, feature) with the attribution and the field value."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["record", "feature", "shap", "value"])
        for i, (row, vals) in enumerate(zip(summary.matrix, summary.values)):
            for j, name in enumerate(summary.features):
                v = vals.get(name)
                w.writerow([i, name, repr(float(row[j])), "" if v is None else v])
