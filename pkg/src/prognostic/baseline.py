"""Pretrained parametric competing-cause survival model.

Each cause has a Weibull cumulative hazard ``exp(a) * t**b * exp(eta)``;
survival is ``exp(-H_bc - H_oc)``. The 26-entry parameter layout is a
documented stand-in for the external model's interface.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from .errors import FitError, NumericError, UndefinedMetricError, ValidationError
from .mapping import CHEMO_REGIMENS, BaselineInput, BaselineTable
from .optimize import NMConfig, nelder_mead

LAYOUT_VERSION = 1

PARAM_NAMES = (
    "bc_log_scale", "bc_shape",
    "bc_age", "bc_age_sq", "bc_log_size", "bc_size_sq", "bc_log_nodes", "bc_nodes",
    "bc_grade2", "bc_grade3", "bc_er", "bc_pr", "bc_her2", "bc_ki67", "bc_detection",
    "tx_chemo", "tx_hormone", "tx_trastuzumab", "tx_radiotherapy", "tx_bisphosphonate",
    "oc_log_scale", "oc_shape", "oc_age", "oc_smoker",
    "rt_heart_per_gy", "rt_other",
)
N_PARAMS = len(PARAM_NAMES)
SHAPE_INDEX = (1, 21)
BASELINE_INDEX = (0, 1, 20, 21)

# mandatory inputs, in reporting order
MANDATORY = ("size_mm", "grade", "nodes", "radiotherapy", "er")

DEFAULT_CENTERS = {"age": 64.2, "size_mm": 15.0, "size_scale": 20.0, "nodes_scale": 10.0}

# chemotherapy intensity multiplier of the chemo coefficient by regimen
REGIMEN_INTENSITY = {"none": 0.0, "standard_anthracycline": 0.7, "taxane_or_highdose": 1.0}


@dataclass
class BaselineParamVector:
    values: np.ndarray
    centers: dict = field(default_factory=lambda: dict(DEFAULT_CENTERS))

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != N_PARAMS:
            raise ValidationError(f"parameter vector must have {N_PARAMS} entries, got {v.size}")
        bad = ~np.isfinite(v)
        if bad.any():
            raise ValidationError(f"parameter {PARAM_NAMES[int(np.argmax(bad))]} is not finite")
        for i in SHAPE_INDEX:
            if v[i] <= 0:
                raise ValidationError(f"shape parameter {PARAM_NAMES[i]} must be positive")
        self.values = v

    def __getitem__(self, name):
        return self.values[PARAM_NAMES.index(name)]

    def with_values(self, values):
        return BaselineParamVector(values, dict(self.centers))

    def to_dict(self):
        return {
            "layout_version": LAYOUT_VERSION,
            "parameters": {k: float(v) for k, v in zip(PARAM_NAMES, self.values)},
            "centers": dict(self.centers),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("layout_version") != LAYOUT_VERSION:
            raise ValidationError(f"unsupported layout_version {d.get('layout_version')!r}")
        params = d.get("parameters")
        if not isinstance(params, dict):
            raise ValidationError("'parameters' must be a mapping of names to values")
        if len(params) != N_PARAMS:
            raise ValidationError(f"parameter vector must have {N_PARAMS} entries, got {len(params)}")
        unknown = set(params) - set(PARAM_NAMES)
        if unknown:
            raise ValidationError(f"unknown parameters {sorted(unknown)}")
        centers = dict(DEFAULT_CENTERS)
        centers.update(d.get("centers", {}))
        return cls(np.array([float(params[k]) for k in PARAM_NAMES]), centers)


def save_params(p: BaselineParamVector, path):
    with open(path, "w") as fh:
        json.dump(p.to_dict(), fh, indent=2)
        fh.write("\n")


def load_params(path) -> BaselineParamVector:
    with open(path) as fh:
        return BaselineParamVector.from_dict(json.load(fh))


def reference_params() -> BaselineParamVector:
    """The bundled pretrained stand-in vector."""
    text = resources.files("prognostic.data").joinpath("baseline_reference.json").read_text()
    return BaselineParamVector.from_dict(json.loads(text))


@dataclass
class SurvivalPrediction:
    prob: Optional[float]
    valid: int
    missing_mandatory: list
    model_tag: str = "baseline"


def validity_check(x: BaselineInput) -> list:
    return [name for name in MANDATORY if getattr(x, name) is None]


def validity_mask(table: BaselineTable) -> np.ndarray:
    ok = np.ones(len(table), dtype=bool)
    for name in MANDATORY:
        ok &= ~np.isnan(table.columns[name])
    return ok


def design(table: BaselineTable, centers: dict):
    """Per-record term matrices (bc covariates, treatments, oc terms).

    Columns line up with parameter indices 2..14, 15..19 and 22..25. Rows for
    invalid records contain NaN in the mandatory-derived columns.
    """
    c = table.columns
    n = len(table)
    age_c = (c["age"] - centers["age"]) / 10.0
    size = c["size_mm"]
    nodes = c["nodes"].copy()
    half = (c["micrometastases_half_node"] == 1) & (nodes == 1)
    nodes[half] = 0.5
    grade = c["grade"]
    with np.errstate(invalid="ignore", divide="ignore"):
        log_size = np.log(size / centers["size_mm"])
    zero_if_nan = lambda a: np.where(np.isnan(a), 0.0, a)
    er = c["er"]
    her2 = zero_if_nan(c["her2"])
    bc = np.column_stack(
        [
            age_c,
            age_c**2,
            log_size,
            ((size - centers["size_mm"]) / centers["size_scale"]) ** 2,
            np.log(nodes + 1.0),
            nodes / centers["nodes_scale"],
            np.where(np.isnan(grade), np.nan, (grade == 2).astype(float)),
            np.where(np.isnan(grade), np.nan, (grade == 3).astype(float)),
            er,
            zero_if_nan(c["pr"]),
            her2,
            zero_if_nan(c["ki67"]),
            c["detection_mode"],
        ]
    )
    intensity = np.array([REGIMEN_INTENSITY[r] for r in CHEMO_REGIMENS])
    reg = c["chemo_regimen"]
    chemo = np.zeros(n)
    ok = ~np.isnan(reg) & (zero_if_nan(c["chemo_tx"]) == 1)
    chemo[ok] = intensity[reg[ok].astype(int)]
    radio = c["radiotherapy"]
    tx = np.column_stack(
        [
            chemo,
            c["hormone_tx"] * er,
            c["trastuzumab_tx"] * her2,
            radio,
            c["bisphosphonate_tx"],
        ]
    )
    oc = np.column_stack([age_c, c["smoker"], c["heart_dose_gy"] * radio, radio])
    return bc, tx, oc


def _hazards(values, bc, tx, oc, t):
    v = values
    eta_bc = bc @ v[2:15] + tx @ v[15:20]
    eta_oc = oc[:, :2] @ v[22:24] + oc[:, 2:] @ v[24:26]
    h_bc = np.exp(v[0]) * np.power(float(t), v[1]) * np.exp(eta_bc)
    h_oc = np.exp(v[20]) * np.power(float(t), v[21]) * np.exp(eta_oc)
    return h_bc, h_oc


def _culprit(values, bc, tx, oc, t):
    """Name the parameter whose term produces the first nonfinite value."""
    v = values
    blocks = [(0, None), (1, None)]
    for j in range(13):
        blocks.append((2 + j, bc[:, j]))
    for j in range(5):
        blocks.append((15 + j, tx[:, j]))
    blocks += [(20, None), (21, None), (22, oc[:, 0]), (23, oc[:, 1]), (24, oc[:, 2]), (25, oc[:, 3])]
    with np.errstate(all="ignore"):
        for i, col in blocks:
            if i in (0, 20):
                term = math.exp(v[i]) if v[i] < 700 else math.inf
            elif i in (1, 21):
                term = t ** v[i] if v[i] * math.log(t) < 700 else math.inf
            else:
                term = np.exp(v[i] * col)
            if not np.all(np.isfinite(term)):
                return PARAM_NAMES[i]
    return PARAM_NAMES[int(np.argmax(np.abs(v)))]


def predict_table(p: BaselineParamVector, table: BaselineTable, t: float):
    """Vectorised survival at ``t``; returns (prob with NaN where invalid, valid mask)."""
    if not t > 0:
        raise ValidationError("prediction horizon must be positive")
    valid = validity_mask(table)
    prob = np.full(len(table), np.nan)
    if valid.any():
        bc, tx, oc = design(table.subset(valid), p.centers)
        with np.errstate(over="ignore", invalid="ignore"):
            h_bc, h_oc = _hazards(p.values, bc, tx, oc, t)
            s = np.exp(-(h_bc + h_oc))
        if not (np.all(np.isfinite(h_bc)) and np.all(np.isfinite(h_oc))):
            raise NumericError(_culprit(p.values, bc, tx, oc, t))
        prob[valid] = s
    return prob, valid


def predict_survival(p: BaselineParamVector, x: BaselineInput, t: float, model_tag="baseline"):
    if not t > 0:
        raise ValidationError("prediction horizon must be positive")
    missing = validity_check(x)
    if missing:
        return SurvivalPrediction(None, 0, missing, model_tag)
    prob, _ = predict_table(p, BaselineTable.from_inputs([x]), t)
    return SurvivalPrediction(float(prob[0]), 1, [], model_tag)


def default_nm_config(seed=None) -> NMConfig:
    step = np.full(N_PARAMS, 0.05)
    step[list(BASELINE_INDEX)] = 0.25
    return NMConfig(step=step, seed=seed)


@dataclass
class FineTuneResult:
    params: BaselineParamVector
    objective: float
    initial_objective: float
    trace: list
    n_evals: int


def make_objective(p0: BaselineParamVector, table: BaselineTable, times, events, objective, t):
    """Objective over raw vectors (lower is better); invalid vectors score +inf."""
    from . import metrics

    valid = validity_mask(table)
    times = np.asarray(times, dtype=float)[valid]
    events = np.asarray(events)[valid]
    if int(events.sum()) < 2:
        raise FitError("fewer than 2 events among records with valid baseline predictions")
    bc, tx, oc = design(table.subset(valid), p0.centers)
    if objective not in ("ici", "auc"):
        raise ValidationError(f"unknown objective {objective!r}")

    def f(values):
        if values[1] <= 0 or values[21] <= 0:
            return math.inf
        with np.errstate(all="ignore"):
            h_bc, h_oc = _hazards(values, bc, tx, oc, t)
            s = np.exp(-(h_bc + h_oc))
        if not np.all(np.isfinite(s)):
            return math.inf
        try:
            if objective == "ici":
                return metrics.ici(s, times, events, t)
            return -metrics.ipcw_auc(-s, times, events, t)
        except UndefinedMetricError:
            return math.inf

    return f


def fine_tune(p0: BaselineParamVector, train, objective="ici", t=5.0, nm_config=None, profile=None):
    """Nelder-Mead refinement of ``p0``; see :func:`fine_tune_result`."""
    return fine_tune_result(p0, train, objective, t, nm_config, profile).params


def fine_tune_result(p0, train, objective="ici", t=5.0, nm_config=None, profile=None) -> FineTuneResult:
    """Nelder-Mead refinement of ``p0`` on a training cohort, with its trace.

    ``train`` is a Cohort (mapped with ``profile``) or a tuple
    ``(BaselineTable, times, events)``. Only records with a valid baseline
    prediction enter the objective.
    """
    if isinstance(train, tuple):
        table, times, events = train
    else:
        from .mapping import load_profile, map_cohort

        table = map_cohort(train, profile or load_profile("ma27"))
        times, events = train.time, train.event
    if len(table) == 0:
        raise FitError("empty training set")
    f = make_objective(p0, table, times, events, objective, t)
    f0 = f(p0.values)
    if not math.isfinite(f0):
        raise FitError("objective undefined at the starting parameters")
    res = nelder_mead(f, p0.values, nm_config or default_nm_config())
    x = res.x if res.fun <= f0 else p0.values
    return FineTuneResult(p0.with_values(x), min(res.fun, f0), f0, res.trace, res.n_evals)
