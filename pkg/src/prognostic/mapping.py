"""Mapping of cohort covariates to the parametric baseline model's inputs.

Profiles are JSON documents with a ``version`` field. Three are bundled:
``ma27`` (nodal stage approximated by node counts, taxane-era chemotherapy),
``seer`` and ``team`` (node counts recorded, 1 Gy heart dose when laterality
is unknown, standard anthracyclines for TEAM).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from .cohort import LATERALITIES, NODAL_STAGES, Cohort, PatientRecord
from .errors import ConfigError

CHEMO_REGIMENS = ("none", "standard_anthracycline", "taxane_or_highdose")

# fields of BaselineInput that may legitimately be missing
OPTIONAL_INPUTS = (
    "er", "pr", "her2", "ki67", "size_mm", "grade", "nodes", "radiotherapy",
    "heart_dose_gy", "chemo_tx", "chemo_regimen",
)


@dataclass(frozen=True)
class MappingProfile:
    name: str
    version: int = 1
    year_dx: int = 2003
    chemo_regimen: str = "taxane_or_highdose"
    # "count_first": use node_count when recorded, else the nodal-stage approximation
    node_precedence: str = "count_first"
    stage_nodes: dict = field(default_factory=lambda: {"N0": 0.0, "N1": 2.0, "N2": 7.0, "N3": 10.0})
    screening_ages: tuple = (50.0, 75.0)
    screened_detection: float = 0.5
    heart_dose: dict = field(
        default_factory=lambda: {"left": 2.0, "right": 0.0, "bilateral": 2.0, "missing": 1.0}
    )
    # ages below this are premenopausal; None means everyone is postmenopausal
    premenopausal_below: Optional[float] = None
    smoker: int = 0
    hormone_tx: int = 1
    bisphosphonate_tx: int = 0
    micrometastases: int = 0

    def __post_init__(self):
        if self.chemo_regimen not in CHEMO_REGIMENS[1:]:
            raise ConfigError(f"unknown chemotherapy regimen {self.chemo_regimen!r}")
        if self.node_precedence not in ("count_first", "stage_first"):
            raise ConfigError(f"unknown node precedence {self.node_precedence!r}")
        missing = set(NODAL_STAGES) - set(self.stage_nodes)
        if missing:
            raise ConfigError(f"stage_nodes lacks {sorted(missing)}")

    def to_dict(self):
        return {
            "version": self.version,
            "name": self.name,
            "year_dx": self.year_dx,
            "chemo_regimen": self.chemo_regimen,
            "node_precedence": self.node_precedence,
            "stage_nodes": dict(self.stage_nodes),
            "screening_ages": list(self.screening_ages),
            "screened_detection": self.screened_detection,
            "heart_dose": dict(self.heart_dose),
            "premenopausal_below": self.premenopausal_below,
            "smoker": self.smoker,
            "hormone_tx": self.hormone_tx,
            "bisphosphonate_tx": self.bisphosphonate_tx,
            "micrometastases": self.micrometastases,
        }

    @classmethod
    def from_dict(cls, d):
        if "version" not in d:
            raise ConfigError("mapping profile lacks a 'version' field")
        d = dict(d)
        if "screening_ages" in d:
            d["screening_ages"] = tuple(d["screening_ages"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad mapping profile: {exc}") from None


def load_profile(name_or_path) -> MappingProfile:
    """Load a bundled profile by name (``ma27``, ``seer``, ``team``) or a JSON path."""
    name = str(name_or_path)
    if name in ("ma27", "seer", "team"):
        text = resources.files("prognostic.data").joinpath(f"profile_{name}.json").read_text()
    else:
        with open(name) as fh:
            text = fh.read()
    return MappingProfile.from_dict(json.loads(text))


@dataclass(frozen=True)
class BaselineInput:
    """Inputs of the parametric baseline model; ``None`` marks missing."""

    year_dx: int
    age: float
    postmenopausal: int
    smoker: int
    er: Optional[int]
    pr: Optional[int]
    her2: Optional[int]
    ki67: Optional[int]
    size_mm: Optional[float]
    grade: Optional[int]
    detection_mode: float
    nodes: Optional[float]
    micrometastases_half_node: int
    radiotherapy: Optional[int]
    heart_dose_gy: Optional[float]
    hormone_tx: int
    chemo_tx: Optional[int]
    trastuzumab_tx: int
    bisphosphonate_tx: int
    chemo_regimen: Optional[str]


def contradictions(x: BaselineInput) -> list:
    """Names of rule violations among the inputs (nonfatal, reported only)."""
    out = []
    if x.trastuzumab_tx == 1 and x.her2 == 0:
        out.append("trastuzumab_without_her2")
    if x.radiotherapy == 0 and x.heart_dose_gy not in (None, 0.0):
        out.append("heart_dose_without_radiotherapy")
    return out


def map_to_baseline_input(r: PatientRecord, profile: MappingProfile) -> BaselineInput:
    """Total mapping of one record; mandatory gaps stay ``None``."""
    t = map_cohort(Cohort.from_records([r], horizon=max(5.0, r.time)), profile)
    return t.row(0)


@dataclass
class BaselineTable:
    """Columnar ``BaselineInput`` values; NaN marks missing entries."""

    columns: dict

    def __len__(self):
        return len(self.columns["age"])

    def subset(self, index):
        return BaselineTable({k: v[index] for k, v in self.columns.items()})

    def row(self, i) -> BaselineInput:
        c = self.columns

        def opt(name, cast):
            v = c[name][i]
            return None if np.isnan(v) else cast(v)

        regimen = c["chemo_regimen"][i]
        return BaselineInput(
            year_dx=int(c["year_dx"][i]),
            age=float(c["age"][i]),
            postmenopausal=int(c["postmenopausal"][i]),
            smoker=int(c["smoker"][i]),
            er=opt("er", int),
            pr=opt("pr", int),
            her2=opt("her2", int),
            ki67=opt("ki67", int),
            size_mm=opt("size_mm", float),
            grade=opt("grade", int),
            detection_mode=float(c["detection_mode"][i]),
            nodes=opt("nodes", float),
            micrometastases_half_node=int(c["micrometastases_half_node"][i]),
            radiotherapy=opt("radiotherapy", int),
            heart_dose_gy=opt("heart_dose_gy", float),
            hormone_tx=int(c["hormone_tx"][i]),
            chemo_tx=opt("chemo_tx", int),
            trastuzumab_tx=int(c["trastuzumab_tx"][i]),
            bisphosphonate_tx=int(c["bisphosphonate_tx"][i]),
            chemo_regimen=None if np.isnan(regimen) else CHEMO_REGIMENS[int(regimen)],
        )

    @classmethod
    def from_inputs(cls, inputs):
        inputs = list(inputs)
        cols = {}
        for name in BaselineInput.__dataclass_fields__:
            vals = []
            for x in inputs:
                v = getattr(x, name)
                if name == "chemo_regimen" and v is not None:
                    v = CHEMO_REGIMENS.index(v)
                vals.append(np.nan if v is None else float(v))
            cols[name] = np.array(vals, dtype=float)
        return cls(cols)


def map_cohort(c: Cohort, profile: MappingProfile) -> BaselineTable:
    """Vectorised ``map_to_baseline_input`` over a whole cohort."""
    n = len(c)
    col = c.column
    age = col("age")

    nodes_stage = np.full(n, np.nan)
    stage = col("nodal_stage")
    for level, label in enumerate(NODAL_STAGES):
        nodes_stage[stage == level] = profile.stage_nodes[label]
    count = col("node_count")
    if profile.node_precedence == "count_first":
        nodes = np.where(np.isnan(count), nodes_stage, count)
    else:
        nodes = np.where(np.isnan(nodes_stage), count, nodes_stage)

    radio = col("radiotherapy")
    lat = col("laterality")
    dose_side = np.full(n, profile.heart_dose["missing"])
    for level, label in enumerate(LATERALITIES):
        dose_side[lat == level] = profile.heart_dose[label]
    heart = np.where(radio == 1, dose_side, 0.0)
    heart[np.isnan(radio)] = np.nan

    lo, hi = profile.screening_ages
    detection = np.where((age >= lo) & (age <= hi), profile.screened_detection, 0.0)

    traz = col("trastuzumab")
    traz = np.where(np.isnan(traz), 0.0, traz)
    her2 = traz.copy()

    chemo = col("chemotherapy")
    regimen = np.where(chemo == 1, float(CHEMO_REGIMENS.index(profile.chemo_regimen)), 0.0)
    regimen[np.isnan(chemo)] = np.nan

    if profile.premenopausal_below is None:
        post = np.ones(n)
    else:
        post = (age >= profile.premenopausal_below).astype(float)

    return BaselineTable(
        {
            "year_dx": np.full(n, float(profile.year_dx)),
            "age": age,
            "postmenopausal": post,
            "smoker": np.full(n, float(profile.smoker)),
            "er": col("er"),
            "pr": col("pr"),
            "her2": her2,
            "ki67": np.full(n, np.nan),
            "size_mm": col("size_mm"),
            "grade": col("grade"),
            "detection_mode": detection,
            "nodes": nodes,
            "micrometastases_half_node": np.full(n, float(profile.micrometastases)),
            "radiotherapy": radio,
            "heart_dose_gy": heart,
            "hormone_tx": np.full(n, float(profile.hormone_tx)),
            "chemo_tx": chemo,
            "trastuzumab_tx": traz,
            "bisphosphonate_tx": np.full(n, float(profile.bisphosphonate_tx)),
            "chemo_regimen": regimen,
        }
    )
