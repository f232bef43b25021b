"""Feature encoding and histogram binning for the tree learners.

Age and tumour size are min-max normalised on training data, clamped, and
replaced by a degree-3 Bernstein block. Categorical and binary fields become
level indicators plus an explicit missing indicator, so gaps survive into the
learners without imputation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cohort import GRADES, LATERALITIES, NODAL_STAGES, Cohort, PatientRecord
from .errors import DomainError, ValidationError

CONTINUOUS = ("age", "size_mm")
CATEGORICAL = {"nodal_stage": NODAL_STAGES, "laterality": LATERALITIES, "grade": GRADES}
BINARY = ("er", "pr", "radiotherapy", "chemotherapy", "trastuzumab")
MISSING_CODE = 255


def bernstein_basis(x01, degree: int = 3) -> np.ndarray:
    """Bernstein polynomials ``C(d,k) x^k (1-x)^(d-k)``, k = 0..d, along the last axis."""
    x = np.asarray(x01, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise DomainError("Bernstein argument must lie in [0, 1]")
    k = np.arange(degree + 1)
    coef = np.array([math.comb(degree, j) for j in k], dtype=float)
    xe = x[..., None]
    return coef * xe**k * (1.0 - xe) ** (degree - k)


@dataclass
class FeatureVector:
    names: tuple
    values: np.ndarray  # NaN marks a missing entry

    @property
    def missing(self):
        return np.isnan(self.values)


@dataclass
class EncoderSpec:
    mins: dict
    maxs: dict
    degree: int = 3
    # False keeps age and size as single raw columns instead of Bernstein blocks
    bernstein: bool = True

    @classmethod
    def fit(cls, cohort: Cohort, degree: int = 3, bernstein: bool = True) -> "EncoderSpec":
        mins, maxs = {}, {}
        for name in CONTINUOUS:
            col = cohort.values[name][cohort.present[name]]
            if col.size == 0:
                mins[name], maxs[name] = 0.0, 1.0
            else:
                mins[name], maxs[name] = float(col.min()), float(col.max())
        return cls(mins, maxs, degree, bernstein)

    @property
    def names(self) -> tuple:
        out = []
        for name in CONTINUOUS:
            if self.bernstein:
                out += [f"{name}_b{k}" for k in range(self.degree + 1)]
            else:
                out.append(name)
        out.append("node_count")
        for name, levels in CATEGORICAL.items():
            out += [f"{name}={lv}" for lv in levels]
            out.append(f"{name}=missing")
        for name in BINARY:
            out += [name, f"{name}=missing"]
        return tuple(out)

    def to_dict(self):
        return {"mins": self.mins, "maxs": self.maxs, "degree": self.degree, "bernstein": self.bernstein}

    @classmethod
    def from_dict(cls, d):
        return cls(dict(d["mins"]), dict(d["maxs"]), int(d["degree"]), bool(d.get("bernstein", True)))

    def normalise(self, name, x):
        lo, hi = self.mins[name], self.maxs[name]
        span = hi - lo
        if span <= 0:
            return np.where(np.isnan(x), np.nan, 0.0)
        with np.errstate(invalid="ignore"):
            return np.clip((x - lo) / span, 0.0, 1.0)


def encode_cohort(cohort: Cohort, spec: EncoderSpec) -> np.ndarray:
    """Feature matrix (n, p) in ``spec.names`` order; NaN marks missing."""
    n = len(cohort)
    blocks = []
    for name in CONTINUOUS:
        if not spec.bernstein:
            blocks.append(cohort.column(name)[:, None])
            continue
        x = spec.normalise(name, cohort.column(name))
        miss = np.isnan(x)
        b = bernstein_basis(np.where(miss, 0.0, x), spec.degree)
        b[miss] = np.nan
        blocks.append(b)
    blocks.append(cohort.column("node_count")[:, None])
    for name, levels in CATEGORICAL.items():
        present = cohort.present[name]
        v = cohort.values[name]
        cols = np.zeros((n, len(levels) + 1))
        for j in range(len(levels)):
            # grade is stored as its value, the other categoricals as level index
            code = levels[j] if name == "grade" else j
            cols[:, j] = present & (v == code)
        cols[:, -1] = ~present
        blocks.append(cols)
    for name in BINARY:
        present = cohort.present[name]
        blocks.append(np.column_stack([np.where(present, cohort.values[name], 0.0), ~present]))
    return np.hstack(blocks).astype(float)


def source_field(feature_name: str) -> str:
    """Cohort field an encoded column derives from."""
    for sep in ("=", "_b"):
        if sep in feature_name:
            head = feature_name.split(sep)[0]
            if sep == "=" or head in CONTINUOUS:
                return head
    return feature_name


def encode(r: PatientRecord, spec: EncoderSpec) -> FeatureVector:
    row = encode_cohort(Cohort.from_records([r], horizon=max(5.0, r.time)), spec)[0]
    return FeatureVector(spec.names, row)


@dataclass
class BinMapper:
    """Per-feature cut values; code c means ``edges[c-1] < x <= edges[c]``."""

    edges: list

    @classmethod
    def fit(cls, X, max_bins: int = 32) -> "BinMapper":
        X = np.asarray(X, dtype=float)
        if not 2 <= max_bins <= 254:
            raise ValidationError("max_bins must lie in [2, 254]")
        edges = []
        for j in range(X.shape[1]):
            col = X[:, j]
            col = col[~np.isnan(col)]
            uniq = np.unique(col)
            if uniq.size <= max_bins:
                e = uniq
            else:
                q = np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:])
                e = np.unique(q)
            edges.append(np.asarray(e, dtype=float))
        return cls(edges)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape, dtype=np.uint8)
        for j, e in enumerate(self.edges):
            col = X[:, j]
            if e.size == 0:
                codes = np.zeros(len(col), dtype=np.int64)
            else:
                codes = np.minimum(np.searchsorted(e, col, side="left"), e.size - 1)
            codes = np.where(np.isnan(col), MISSING_CODE, codes)
            out[:, j] = codes
        return out

    def threshold(self, feature, code) -> float:
        return float(self.edges[feature][code])

    def to_dict(self):
        return {"edges": [e.tolist() for e in self.edges]}

    @classmethod
    def from_dict(cls, d):
        return cls([np.asarray(e, dtype=float) for e in d["edges"]])
