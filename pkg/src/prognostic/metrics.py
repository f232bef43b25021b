"""Censoring-aware evaluation at a fixed horizon.

Kaplan-Meier and censoring survival, IPCW cumulative/dynamic AUC, smoothed
calibration via a proportional-hazards spline regression on cll(prediction),
the integrated calibration index, plot-data emitters and percentile bootstrap
intervals. Undefined metrics raise ``UndefinedMetricError``; nothing here
returns a silent NaN.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import UndefinedMetricError

CLAMP = 1e-6
KNOT_QUANTILES = (0.05, 0.275, 0.5, 0.725, 0.95)


@dataclass
class StepFunction:
    """Right-continuous step function with value ``initial`` before the first breakpoint."""

    x: np.ndarray
    y: np.ndarray
    initial: float = 1.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self.x, t, side="right")
        vals = np.concatenate([[self.initial], self.y])
        return vals[i]

    def left_limit(self, t):
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self.x, t, side="left")
        vals = np.concatenate([[self.initial], self.y])
        return vals[i]


def _product_limit(times, hits, at_risk_fn):
    times = np.asarray(times, dtype=float)
    hits = np.asarray(hits)
    order = np.argsort(times, kind="stable")
    ts, hs = times[order], hits[order]
    uniq, first = np.unique(ts, return_index=True)
    n = len(ts)
    d = np.add.reduceat(hs, first) if n else np.array([])
    n_at = n - first
    at_risk = at_risk_fn(n_at, uniq, first, ts, order)
    keep = d > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        factors = (at_risk[keep] - d[keep]) / at_risk[keep]
    return StepFunction(uniq[keep], np.cumprod(factors))


def kaplan_meier(times, events) -> StepFunction:
    """Product-limit estimate of the survival function.

    For the censoring distribution pass ``1 - events`` (or use
    :func:`censoring_km`, which orders tied events before censorings).
    """
    events = np.asarray(events, dtype=float)
    return _product_limit(times, events, lambda n_at, *_: n_at.astype(float))


def censoring_km(times, events) -> StepFunction:
    """Kaplan-Meier of the censoring time; events at a tied time leave the risk set first."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    order = np.argsort(times, kind="stable")
    ts = times[order]
    ev = events[order]

    def at_risk(n_at, uniq, first, *_):
        d_event = np.add.reduceat(ev, first)
        return (n_at - d_event).astype(float)

    return _product_limit(times, 1.0 - events, at_risk)


def _cases_controls(times, events, t):
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    cases = (times <= t) & (events == 1)
    # censored exactly at t is known alive at t (administrative cut at the horizon)
    controls = (times > t) | ((times == t) & (events == 0))
    if not cases.any():
        raise UndefinedMetricError(f"no cases (events by t={t})")
    if not controls.any():
        raise UndefinedMetricError(f"no controls (survivors past t={t})")
    return cases, controls


def _case_weights(times, events, cases):
    sc = censoring_km(times, events)
    g_case = sc.left_limit(np.asarray(times, dtype=float)[cases])
    if np.any(g_case <= 0):
        raise UndefinedMetricError("censoring survival reaches zero before an event")
    return 1.0 / g_case


def ipcw_auc(risks, times, events, t) -> float:
    """Cumulative/dynamic AUC at ``t`` with inverse-probability-of-censoring weights.

    Cases (event by ``t``) are weighted by 1/G(T_i-), with G the censoring
    Kaplan-Meier. Controls (known alive at ``t``) share the weight 1/G(t),
    which cancels from the ratio. Ties count one half.
    """
    risks = np.asarray(risks, dtype=float)
    cases, controls = _cases_controls(times, events, t)
    w_case = _case_weights(times, events, cases)
    rc = np.sort(risks[controls])
    ri = risks[cases]
    below = np.searchsorted(rc, ri, side="left")
    ties = np.searchsorted(rc, ri, side="right") - below
    concordant = below + 0.5 * ties
    return float((w_case * concordant).sum() / (w_case.sum() * len(rc)))


def roc_curve_data(risks, times, events, t):
    """IPCW-weighted ROC points (fpr, tpr) from (0, 0) to (1, 1)."""
    risks = np.asarray(risks, dtype=float)
    cases, controls = _cases_controls(times, events, t)
    w_case = _case_weights(times, events, cases)
    thresholds = np.unique(risks)[::-1]
    rc = np.sort(risks[controls])
    order = np.argsort(-risks[cases], kind="stable")
    ri = risks[cases][order]
    cw = np.concatenate([[0.0], np.cumsum(w_case[order])])
    total = cw[-1]
    # number of case / control risks >= threshold
    n_case_ge = np.searchsorted(-ri, -thresholds, side="right")
    n_ctrl_ge = len(rc) - np.searchsorted(rc, thresholds, side="left")
    tpr = cw[n_case_ge] / total
    fpr = n_ctrl_ge / len(rc)
    fpr = np.concatenate([[0.0], fpr])
    tpr = np.concatenate([[0.0], tpr])
    return np.column_stack([fpr, tpr])


def trapezoid_area(points) -> float:
    p = np.asarray(points, dtype=float)
    return float(np.sum(np.diff(p[:, 0]) * (p[1:, 1] + p[:-1, 1]) / 2.0))


# --- proportional-hazards smoother ------------------------------------------------


def rcs_basis(x, knots) -> np.ndarray:
    """Restricted cubic spline basis (linear column first), Harrell's normalisation."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(knots, dtype=float)
    cols = [x]
    if len(k) >= 3:
        tk, tk1 = k[-1], k[-2]
        scale = (tk - k[0]) ** 2
        for j in range(len(k) - 2):
            term = (
                np.maximum(x - k[j], 0) ** 3
                - np.maximum(x - tk1, 0) ** 3 * (tk - k[j]) / (tk - tk1)
                + np.maximum(x - tk, 0) ** 3 * (tk1 - k[j]) / (tk - tk1)
            )
            cols.append(term / scale)
    return np.column_stack(cols)


@dataclass
class CoxFit:
    beta: np.ndarray
    center: np.ndarray
    event_times: np.ndarray
    cumhaz: np.ndarray  # Breslow baseline at the centred covariates
    converged: bool

    def survival(self, X, t):
        eta = (np.asarray(X) - self.center) @ self.beta
        i = np.searchsorted(self.event_times, t, side="right")
        h0 = self.cumhaz[i - 1] if i > 0 else 0.0
        return np.exp(-h0 * np.exp(eta))


def cox_fit(X, times, events, max_iter=60, tol=1e-10, ridge=1e-8) -> CoxFit:
    """Breslow-tie Cox regression by damped Newton-Raphson."""
    X = np.asarray(X, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    n, p = X.shape
    center = X.mean(axis=0)
    Xc = X - center
    order = np.argsort(times, kind="stable")
    Xs, ts, es = Xc[order], times[order], events[order]
    # index of the first member of each subject's risk set (ties included)
    risk_start = np.searchsorted(ts, ts, side="left")
    ev_idx = np.flatnonzero(es == 1)
    rs = risk_start[ev_idx]
    XX = Xs[:, :, None] * Xs[:, None, :]

    def pieces(beta):
        eta = Xs @ beta
        shift = eta.max()
        w = np.exp(eta - shift)
        s0 = np.cumsum(w[::-1])[::-1]
        s1 = np.cumsum((w[:, None] * Xs)[::-1], axis=0)[::-1]
        s2 = np.cumsum((w[:, None, None] * XX)[::-1], axis=0)[::-1]
        S0, S1, S2 = s0[rs], s1[rs], s2[rs]
        ll = (eta[ev_idx] - shift - np.log(S0)).sum() - 0.5 * ridge * beta @ beta
        m = S1 / S0[:, None]
        grad = (Xs[ev_idx] - m).sum(axis=0) - ridge * beta
        hess = (S2 / S0[:, None, None] - m[:, :, None] * m[:, None, :]).sum(axis=0)
        hess += ridge * np.eye(p)
        return ll, grad, hess

    beta = np.zeros(p)
    ll, grad, hess = pieces(beta)
    converged = False
    for _ in range(max_iter):
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        t_step = 1.0
        while True:
            cand = beta + t_step * step
            ll_new, g_new, h_new = pieces(cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12:
                break
            t_step *= 0.5
            if t_step < 1e-8:
                break
        if t_step < 1e-8:
            break
        improvement = ll_new - ll
        beta, ll, grad, hess = cand, ll_new, g_new, h_new
        if abs(improvement) < tol:
            converged = True
            break

    eta = Xs @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    s0 = np.cumsum(w[::-1])[::-1]
    uniq, first = np.unique(ts[ev_idx], return_index=True)
    d = np.diff(np.append(first, len(ev_idx)))
    denom = s0[np.searchsorted(ts, uniq, side="left")] * math.exp(shift)
    cumhaz = np.cumsum(d / denom)
    return CoxFit(beta, center, uniq, cumhaz, converged)


def _check_smoothing_inputs(preds, times, events):
    n = len(preds)
    if n < 50:
        raise UndefinedMetricError(f"smoothed calibration needs n >= 50, got {n}")
    n_ev = int(np.sum(events))
    if n_ev < 5:
        raise UndefinedMetricError(f"smoothed calibration needs >= 5 events, got {n_ev}")


def smoothed_observed(preds, times, events, t) -> np.ndarray:
    """Model-implied observed survival at ``t`` for every record.

    A Cox model of (times, events) on a 5-knot restricted cubic spline of
    ln(-ln p) is fitted and evaluated at ``t``. Coinciding knots are merged;
    with no spread in the predictions the Kaplan-Meier estimate at ``t`` is
    returned for everyone.
    """
    preds = np.asarray(preds, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    _check_smoothing_inputs(preds, times, events)
    p = np.clip(preds, CLAMP, 1.0 - CLAMP)
    x = np.log(-np.log(p))
    if np.ptp(x) == 0:
        return np.full(len(p), float(kaplan_meier(times, events)(t)))
    knots = np.unique(np.quantile(x, KNOT_QUANTILES))
    # knots too close together make the basis numerically singular
    keep = np.concatenate([[True], np.diff(knots) > 1e-6 * max(np.ptp(x), 1.0)])
    knots = knots[keep]
    basis = rcs_basis(x, knots if len(knots) >= 3 else knots[:0])
    fit = cox_fit(basis, times, events)
    if not np.all(np.isfinite(fit.beta)):
        fit = cox_fit(basis[:, :1], times, events)
        basis = basis[:, :1]
    return fit.survival(basis, t)


def ici(preds, times, events, t) -> float:
    """Integrated calibration index: mean |smoothed observed - predicted| survival."""
    preds = np.asarray(preds, dtype=float)
    obs = smoothed_observed(preds, times, events, t)
    return float(np.mean(np.abs(obs - preds)))


@dataclass
class CalibrationCurve:
    predicted: np.ndarray
    observed: np.ndarray
    quartiles: list  # dicts: quartile, mean_pred, mean_obs, sd_pred, sd_obs, n

    def rows(self):
        return [
            (q["quartile"], q["mean_pred"], q["mean_obs"], q["sd_pred"], q["sd_obs"])
            for q in self.quartiles
        ]


def _sd(a):
    return float(np.std(a, ddof=1)) if len(a) > 1 else 0.0


def calibration_plot_data(preds, times, events, t) -> CalibrationCurve:
    """Quartile summary of smoothed calibration after 10-90 percentile trimming."""
    preds = np.asarray(preds, dtype=float)
    if preds.size == 0:
        raise UndefinedMetricError("no predictions")
    obs = smoothed_observed(preds, times, events, t)
    lo, hi = np.percentile(preds, [10, 90])
    keep = (preds >= lo) & (preds <= hi)
    kp, ko = preds[keep], obs[keep]
    order = np.argsort(kp, kind="stable")
    quartiles = []
    for q, idx in enumerate(np.array_split(order, 4), start=1):
        quartiles.append(
            {
                "quartile": q,
                "mean_pred": float(kp[idx].mean()) if len(idx) else float("nan"),
                "mean_obs": float(ko[idx].mean()) if len(idx) else float("nan"),
                "sd_pred": _sd(kp[idx]),
                "sd_obs": _sd(ko[idx]),
                "n": int(len(idx)),
            }
        )
    return CalibrationCurve(preds, obs, quartiles)


def write_calibration_csv(curve: CalibrationCurve, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quartile", "mean_pred", "mean_obs", "sd_pred", "sd_obs"])
        for row in curve.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def write_roc_csv(points, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr"])
        for fpr, tpr in points:
            w.writerow([repr(float(fpr)), repr(float(tpr))])


@dataclass
class BootstrapCI:
    lo: float
    hi: float
    n_undefined: int
    values: np.ndarray

    def __iter__(self):
        yield self.lo
        yield self.hi


def bootstrap_ci(metric: Callable, data, B: int = 1000, seed: int = 0) -> BootstrapCI:
    """Percentile bootstrap interval of ``metric(*arrays)``.

    ``data`` is a tuple of equal-length arrays resampled jointly by row.
    Resamples where the metric is undefined are skipped and counted.
    """
    arrays = [np.asarray(a) for a in data]
    n = len(arrays[0])
    metric(*arrays)  # must be defined on the full sample
    rng = np.random.default_rng(seed)
    vals = []
    undefined = 0
    for _ in range(B):
        idx = rng.integers(0, n, n)
        try:
            vals.append(float(metric(*(a[idx] for a in arrays))))
        except UndefinedMetricError:
            undefined += 1
    if undefined > B / 2:
        raise UndefinedMetricError(f"{undefined} of {B} bootstrap resamples undefined")
    vals = np.array(vals)
    lo, hi = np.percentile(vals, [2.5, 97.5])
    return BootstrapCI(float(lo), float(hi), undefined, vals)
