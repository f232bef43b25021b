"""Synthetic cohorts with known true survival at the horizon.

Two outcome models are available. ``weibull`` draws event times from a
Weibull proportional-hazards model whose log-hazard is linear in named
covariate terms. ``baseline`` draws the time to death from either cause of
the parametric baseline model at a given parameter vector, so the emitted
truth is exactly what that model predicts for the fully observed record.

Missingness is applied after outcomes are drawn. Size, grade, radiotherapy
and nodal stage go missing through a Gaussian copula with a common
correlation, which controls how much the gaps overlap.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtri

from .cohort import COVARIATES, Cohort
from .errors import ConfigError

GENERATOR_VERSION = 1

DEFAULT_MARGINALS = {
    "age_mean": 64.5,
    "age_sd": 9.5,
    "age_range": [45.0, 95.0],
    "nodal_stage": [0.719, 0.217, 0.048, 0.016],
    "laterality": [0.501, 0.484, 0.015],
    "er": 0.993,
    "pr": 0.82,
    "size_median": 15.0,
    "size_sigma": 0.514,
    "grade": [0.32, 0.505, 0.175],
    "radiotherapy": 0.711,
    "chemotherapy": 0.308,
    "trastuzumab": 0.035,
}

DEFAULT_MISSINGNESS = {
    "nodal_stage": 0.001,
    "node_count": 1.0,
    "laterality": 0.0,
    "er": 0.0,
    "pr": 0.02,
    "size_mm": 0.207,
    "grade": 0.219,
    "radiotherapy": 0.289,
    "chemotherapy": 0.0,
    "trastuzumab": 0.747,
}

# fields whose gaps are correlated through the copula
COPULA_FIELDS = ("size_mm", "grade", "radiotherapy", "nodal_stage")

DEFAULT_COEFFICIENTS = {
    "age": 0.25,
    "log_size": 0.6,
    "nodal_stage": 0.55,
    "grade2": 0.45,
    "grade3": 0.95,
    "er": -0.5,
    "pr": -0.35,
    "radiotherapy": -0.2,
    "chemotherapy": 0.25,
    "trastuzumab": 0.2,
}


@dataclass
class GeneratorConfig:
    n: int = 7563
    mode: str = "weibull"
    event_rate: Optional[float] = 0.025
    horizon: float = 5.0
    # C ~ U(0, horizon / censoring_rate); 0 disables random censoring
    censoring_rate: float = 0.6
    weibull_shape: float = 1.2
    coefficients: dict = field(default_factory=lambda: dict(DEFAULT_COEFFICIENTS))
    marginals: dict = field(default_factory=lambda: dict(DEFAULT_MARGINALS))
    missingness: dict = field(default_factory=lambda: dict(DEFAULT_MISSINGNESS))
    missing_correlation: float = 1.0
    # baseline mode: parameter vector (path, or None for the bundled reference) and profile
    baseline_params: Optional[str] = None
    profile: str = "ma27"
    version: int = GENERATOR_VERSION

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.mode not in ("weibull", "baseline"):
            raise ConfigError(f"unknown generator mode {self.mode!r}")
        if self.event_rate is not None and not 0 < self.event_rate < 1:
            raise ConfigError("event_rate must lie in (0, 1)")
        if not 0 <= self.censoring_rate <= 1:
            raise ConfigError("censoring_rate must lie in [0, 1]")
        if not -1 < self.missing_correlation <= 1:
            raise ConfigError("missing_correlation must lie in (-1, 1]")
        if self.horizon <= 0 or self.weibull_shape <= 0:
            raise ConfigError("horizon and weibull_shape must be positive")
        for k, v in self.missingness.items():
            if k not in COVARIATES or k == "age":
                raise ConfigError(f"missingness given for unknown or required field {k!r}")
            if not 0 <= v <= 1:
                raise ConfigError(f"missingness rate for {k} outside [0, 1]")
        m = {**DEFAULT_MARGINALS, **self.marginals}
        for k in ("er", "pr", "radiotherapy", "chemotherapy", "trastuzumab"):
            if not 0 <= m[k] <= 1:
                raise ConfigError(f"marginal rate for {k} outside [0, 1]")
        for k in ("nodal_stage", "laterality", "grade"):
            probs = np.asarray(m[k], dtype=float)
            if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-6:
                raise ConfigError(f"marginal probabilities for {k} must sum to 1")
        self.marginals = m
        self.missingness = {**{k: 0.0 for k in DEFAULT_MISSINGNESS}, **self.missingness}
        unknown = set(self.coefficients) - set(DEFAULT_COEFFICIENTS)
        if unknown:
            raise ConfigError(f"unknown coefficients {sorted(unknown)}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        if "version" not in d:
            raise ConfigError("generator config lacks a 'version' field")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad generator config: {exc}") from None

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SyntheticCohort:
    cohort: Cohort
    true_survival: np.ndarray  # P(T > horizon) per record
    params: object = None  # baseline mode: the vector the outcomes were drawn from
    log_scale: float = 0.0


def _draw_covariates(cfg: GeneratorConfig, rng, n):
    m = cfg.marginals
    lo, hi = m["age_range"]
    age = rng.normal(m["age_mean"], m["age_sd"], n)
    bad = (age < lo) | (age > hi)
    while bad.any():
        age[bad] = rng.normal(m["age_mean"], m["age_sd"], bad.sum())
        bad = (age < lo) | (age > hi)
    age = np.round(age, 1)
    stage = rng.choice(4, size=n, p=m["nodal_stage"]).astype(float)
    # node counts consistent with the stage: N1 1-3, N2 4-9, N3 10-20
    lo_n = np.array([0, 1, 4, 10])[stage.astype(int)]
    hi_n = np.array([0, 3, 9, 20])[stage.astype(int)]
    count = rng.integers(lo_n, hi_n + 1).astype(float)
    lat = rng.choice(3, size=n, p=m["laterality"]).astype(float)
    er = (rng.random(n) < m["er"]).astype(float)
    pr = (rng.random(n) < m["pr"]).astype(float)
    size = np.round(np.exp(np.log(m["size_median"]) + m["size_sigma"] * rng.standard_normal(n)), 1)
    size = np.maximum(size, 1.0)
    grade = (rng.choice(3, size=n, p=m["grade"]) + 1).astype(float)
    radio = (rng.random(n) < m["radiotherapy"]).astype(float)
    chemo = (rng.random(n) < m["chemotherapy"]).astype(float)
    traz = (rng.random(n) < m["trastuzumab"]).astype(float)
    return {
        "age": age,
        "nodal_stage": stage,
        "node_count": count,
        "laterality": lat,
        "er": er,
        "pr": pr,
        "size_mm": size,
        "grade": grade,
        "radiotherapy": radio,
        "chemotherapy": chemo,
        "trastuzumab": traz,
    }


def _weibull_lp(values, coef):
    terms = {
        "age": (values["age"] - 64.5) / 10.0,
        "log_size": np.log(values["size_mm"] / 15.0),
        "nodal_stage": values["nodal_stage"],
        "grade2": (values["grade"] == 2).astype(float),
        "grade3": (values["grade"] == 3).astype(float),
        "er": values["er"],
        "pr": values["pr"],
        "radiotherapy": values["radiotherapy"],
        "chemotherapy": values["chemotherapy"],
        "trastuzumab": values["trastuzumab"],
    }
    lp = np.zeros(len(values["age"]))
    for k, b in coef.items():
        lp += b * terms[k]
    return lp


def _missing_masks(cfg: GeneratorConfig, rng, n):
    rates = cfg.missingness
    rho = cfg.missing_correlation
    shared = rng.standard_normal(n)
    present = {}
    for name in COVARIATES:
        if name == "age":
            present[name] = np.ones(n, dtype=bool)
            continue
        r = rates.get(name, 0.0)
        own = rng.standard_normal(n)
        if name in COPULA_FIELDS:
            z = math.sqrt(max(rho, 0.0)) * shared + math.sqrt(1.0 - max(rho, 0.0)) * own
            if rho < 0:
                z = math.sqrt(-rho) * -shared + math.sqrt(1.0 + rho) * own
        else:
            z = own
        if r <= 0:
            present[name] = np.ones(n, dtype=bool)
        elif r >= 1:
            present[name] = np.zeros(n, dtype=bool)
        else:
            present[name] = z >= ndtri(r)
    return present


_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def expected_event_fraction(cumhaz, horizon, censoring_rate):
    """Expected share of observed events given per-record cumulative hazard functions.

    ``cumhaz(t)`` maps a scalar time to an array of cumulative hazards. With
    C ~ U(0, c_max) and follow-up truncated at the horizon,
    P(event observed) = E[ int_0^u f(t) (1 - t / c_max) dt ], u = min(horizon, c_max).
    """
    if censoring_rate <= 0:
        return float(np.mean(1.0 - np.exp(-cumhaz(horizon))))
    c_max = horizon / censoring_rate
    u = min(horizon, c_max)
    # integrate by parts: F(u)(1 - u/c_max) + (1/c_max) int_0^u F(t) dt
    ts = 0.5 * u * (_GL_X + 1.0)
    integral = sum(w * (1.0 - np.exp(-cumhaz(t))) for w, t in zip(_GL_W, ts)) * 0.5 * u
    f_u = 1.0 - np.exp(-cumhaz(u))
    return float(np.mean(f_u * (1.0 - u / c_max) + integral / c_max))


def _invert_cumhaz(parts, target):
    """Solve sum_j exp(a_j) t^b_j = target for t per record (vectorised bisection on log t)."""
    lo = np.full(len(target), -30.0)
    hi = np.full(len(target), 10.0)

    def H(logt):
        return sum(s * np.exp(b * logt) for s, b in parts)

    while np.any(H(hi) < target):
        hi = np.where(H(hi) < target, hi + 10.0, hi)
        if np.all(hi > 200):
            break
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        below = H(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.exp(0.5 * (lo + hi))


def generate_synthetic(config: GeneratorConfig, seed: int) -> SyntheticCohort:
    cfg = config
    rng = np.random.default_rng(seed)
    n = cfg.n
    values = _draw_covariates(cfg, rng, n)
    h = cfg.horizon

    if cfg.mode == "weibull":
        lp = _weibull_lp(values, cfg.coefficients)
        k = cfg.weibull_shape

        def parts_for(a):
            return [(np.exp(a + lp), k)]

        a = 0.0
        if cfg.event_rate is not None:
            a = _solve_log_scale(lambda a: parts_for(a), cfg)
        parts = parts_for(a)
        params = None
    else:
        from .baseline import _hazards, design, load_params, reference_params
        from .mapping import load_profile, map_cohort

        p = reference_params() if cfg.baseline_params is None else load_params(cfg.baseline_params)
        full = Cohort(
            values=values,
            present={k_: np.ones(n, dtype=bool) for k_ in COVARIATES},
            time=np.ones(n),
            event=np.zeros(n),
            ids=np.arange(n),
            horizon=h,
        )
        table = map_cohort(full, load_profile(cfg.profile))
        bc, tx, oc = design(table, p.centers)
        h_bc1, h_oc1 = _hazards(p.values, bc, tx, oc, 1.0)
        base_bc = h_bc1 / math.exp(p.values[0])
        base_oc = h_oc1 / math.exp(p.values[20])
        b_bc, b_oc = p.values[1], p.values[21]

        def parts_for(a):
            return [
                (np.exp(p.values[0] + a) * base_bc, b_bc),
                (np.exp(p.values[20] + a) * base_oc, b_oc),
            ]

        a = 0.0
        if cfg.event_rate is not None:
            a = _solve_log_scale(parts_for, cfg)
        parts = parts_for(a)
        v = p.values.copy()
        v[0] += a
        v[20] += a
        params = p.with_values(v)

    cumhaz_h = sum(s * h**b for s, b in parts)
    truth = np.exp(-cumhaz_h)
    t_event = _invert_cumhaz(parts, rng.exponential(1.0, n))
    if cfg.censoring_rate > 0:
        t_cens = rng.uniform(0.0, h / cfg.censoring_rate, n)
    else:
        t_cens = np.full(n, np.inf)
    follow = np.minimum(t_cens, h)
    event = (t_event <= follow).astype(np.int8)
    time = np.where(event == 1, t_event, follow)
    # round to whole days, keep times positive, and keep the administrative cut exactly at h
    at_horizon = (event == 0) & (follow >= h)
    time = np.maximum(np.round(time * 365.25) / 365.25, 1.0 / 365.25)
    time = np.where(at_horizon, h, np.minimum(time, h))

    present = _missing_masks(cfg, rng, n)
    cohort = Cohort(
        values=values,
        present=present,
        time=time,
        event=event,
        ids=np.arange(n),
        horizon=h,
        provenance=f"synthetic:{cfg.mode}:seed={seed}",
    )
    return SyntheticCohort(cohort, truth, params, a)


def _solve_log_scale(parts_for, cfg):
    target = cfg.event_rate

    def gap(a):
        parts = parts_for(a)
        return expected_event_fraction(
            lambda t: sum(s * t**b for s, b in parts), cfg.horizon, cfg.censoring_rate
        ) - target

    lo, hi = -40.0, 20.0
    if gap(lo) > 0 or gap(hi) < 0:
        raise ConfigError("event_rate cannot be reached under this censoring")
    return brentq(gap, lo, hi, xtol=1e-12)
