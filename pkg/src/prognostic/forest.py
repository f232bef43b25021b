"""Random survival forest with log-rank splitting and default-direction missing routing."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .cohort import Cohort, PatientRecord
from .errors import FitError, ValidationError
from .features import BinMapper, EncoderSpec, encode_cohort, source_field
from .serialize import load_document, save_document
from .trees import TreeTable

MODEL_VERSION = 1
SPLITRULES = ("logrank", "logrankscore")
FOREST_GRID = {
    "ntree": (500, 1000, 1500),
    "mtry": (3, 4, 6),
    "nodesize": (3, 5, 10, 15),
    "splitrule": SPLITRULES,
}


@dataclass(frozen=True)
class ForestHyperparams:
    ntree: int = 500
    mtry: int = 3
    nodesize: int = 15
    splitrule: str = "logrank"
    max_bins: int = 32
    bernstein: bool = True

    def __post_init__(self):
        if min(self.ntree, self.mtry, self.nodesize) < 1:
            raise ValidationError("ntree, mtry and nodesize must be positive")
        if self.splitrule not in SPLITRULES:
            raise ValidationError(f"unknown splitrule {self.splitrule!r}")

    def capacity_key(self):
        """Ordering used to prefer the smaller model on ties."""
        return (self.ntree, self.mtry, -self.nodesize, SPLITRULES.index(self.splitrule))


def forest_grid():
    return [
        ForestHyperparams(ntree=nt, mtry=m, nodesize=ns, splitrule=sr)
        for nt in FOREST_GRID["ntree"]
        for m in FOREST_GRID["mtry"]
        for ns in FOREST_GRID["nodesize"]
        for sr in FOREST_GRID["splitrule"]
    ]


@dataclass
class FittedForest:
    hp: ForestHyperparams
    seed: int
    encoder: EncoderSpec
    bins: BinMapper
    times: np.ndarray  # unique training times; leaf tables index into these
    trees: TreeTable
    leaf_tidx: np.ndarray
    leaf_H: np.ndarray
    n_train: int

    @property
    def feature_names(self):
        return self.encoder.names

    def prefix(self, ntree) -> "FittedForest":
        """Forest made of the first ``ntree`` trees (identical to fitting with that many)."""
        return FittedForest(
            ForestHyperparams(**{**asdict(self.hp), "ntree": int(ntree)}),
            self.seed, self.encoder, self.bins, self.times, self.trees.prefix(ntree),
            self.leaf_tidx, self.leaf_H, self.n_train,
        )

    def codes(self, cohort: Cohort):
        return self.bins.transform(encode_cohort(cohort, self.encoder))

    def node_chf(self, t):
        """Nelson-Aalen cumulative hazard at ``t`` for every node (0 for internal nodes)."""
        k = np.searchsorted(self.times, t, side="right") - 1
        start = self.trees.extra["leaf_start"].astype(np.int64)
        length = self.trees.extra["leaf_len"].astype(np.int64)
        upto = np.concatenate([[0], np.cumsum(self.leaf_tidx <= k)])
        safe = np.maximum(start, 0)
        c = upto[safe + length] - upto[safe]
        out = np.zeros(len(start))
        has = c > 0
        out[has] = self.leaf_H[safe[has] + c[has] - 1]
        return out

    def chf_matrix(self, cohort: Cohort, t, codes=None):
        """Per-tree terminal cumulative hazard at ``t``: shape (n, ntree)."""
        leaves = self.trees.apply(self.codes(cohort) if codes is None else codes)
        return self.node_chf(t)[leaves]

    def to_dict(self, lists=True):
        conv = (lambda a: a.tolist()) if lists else (lambda a: a)
        return {
            "model": "random_survival_forest",
            "version": MODEL_VERSION,
            "hyperparams": asdict(self.hp),
            "seed": self.seed,
            "encoder": self.encoder.to_dict(),
            "bins": self.bins.to_dict(),
            "times": conv(self.times),
            "trees": self.trees.to_dict(lists),
            "leaf_tidx": conv(self.leaf_tidx),
            "leaf_H": conv(self.leaf_H),
            "n_train": self.n_train,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("model") != "random_survival_forest" or d.get("version") != MODEL_VERSION:
            raise ValidationError("not a version-1 random survival forest document")
        return cls(
            ForestHyperparams(**d["hyperparams"]),
            d["seed"],
            EncoderSpec.from_dict(d["encoder"]),
            BinMapper.from_dict(d["bins"]),
            np.asarray(d["times"], dtype=float),
            TreeTable.from_dict(d["trees"], {"leaf_start": np.int32, "leaf_len": np.int32,
                                             "node_n": np.int32}),
            np.asarray(d["leaf_tidx"], dtype=np.int32),
            np.asarray(d["leaf_H"], dtype=float),
            d["n_train"],
        )

    def save(self, path):
        save_document(self.to_dict(lists=False), path)

    @classmethod
    def load(cls, path):
        return cls.from_dict(load_document(path))


def logrank_split_statistic(left, right) -> float:
    """Absolute standardised log-rank statistic; ``left``/``right`` are (times, events) pairs."""
    (tl, el), (tr, er) = left, right
    return _kernels.logrank_statistic(
        np.asarray(tl, float), np.asarray(el, int), np.asarray(tr, float), np.asarray(er, int)
    )


def tree_streams(seed, tree_index, n):
    """Bootstrap rows and grower seed of one tree; depends only on (seed, tree_index)."""
    rng = np.random.default_rng([int(seed), int(tree_index)])
    boot = rng.integers(0, n, n)
    grow_seed = int(rng.integers(0, 2**63, dtype=np.uint64))
    return boot, grow_seed


def fit_forest(train: Cohort, hp: ForestHyperparams, seed: int, encoder: EncoderSpec = None) -> FittedForest:
    if train.n_events < 2:
        raise FitError("random survival forest needs at least 2 events")
    encoder = encoder or EncoderSpec.fit(train, bernstein=hp.bernstein)
    X = encode_cohort(train, encoder)
    bins = BinMapper.fit(X, hp.max_bins)
    codes = np.ascontiguousarray(bins.transform(X))
    nbins = np.array([len(e) for e in bins.edges], dtype=np.int32)
    times, tidx = np.unique(train.time, return_inverse=True)
    tidx = tidx.astype(np.int64)
    event = train.event.astype(np.int64)
    n = len(train)
    mtry = min(hp.mtry, codes.shape[1])
    rule = SPLITRULES.index(hp.splitrule)

    trees, leaf_tidx, leaf_H = [], [], []
    leaf_offset = 0
    for i in range(hp.ntree):
        boot, grow_seed = tree_streams(seed, i, n)
        rows = boot[np.argsort(tidx[boot], kind="stable")]
        tr = _kernels.grow_survival_tree(codes, nbins, rows, tidx, event, mtry, hp.nodesize, rule, grow_seed)
        tr = dict(tr)
        tr["leaf_start"] = np.where(tr["leaf_start"] >= 0, tr["leaf_start"] + leaf_offset, -1)
        leaf_offset += len(tr["leaf_tidx"])
        leaf_tidx.append(tr["leaf_tidx"])
        leaf_H.append(tr["leaf_H"])
        trees.append(tr)
    table = TreeTable.from_trees(trees, ("leaf_start", "leaf_len", "node_n"))
    return FittedForest(
        hp, int(seed), encoder, bins, times, table,
        np.concatenate(leaf_tidx).astype(np.int32), np.concatenate(leaf_H), n,
    )


def forest_predict_cohort(f: FittedForest, cohort: Cohort, t: float, codes=None) -> np.ndarray:
    """Survival at ``t`` for every record: exp(-mean terminal cumulative hazard)."""
    if t <= 0:
        return np.ones(len(cohort))
    return np.exp(-f.chf_matrix(cohort, t, codes).mean(axis=1))


def forest_predict(f: FittedForest, r: PatientRecord, t: float) -> float:
    c = Cohort.from_records([r], horizon=max(5.0, r.time))
    return float(forest_predict_cohort(f, c, t)[0])


def inbag_counts(f: FittedForest) -> np.ndarray:
    """(n_train, ntree) bootstrap multiplicities, regenerated from the seed streams."""
    out = np.zeros((f.n_train, f.trees.n_trees), dtype=np.int32)
    for i in range(f.trees.n_trees):
        boot, _ = tree_streams(f.seed, i, f.n_train)
        out[:, i] = np.bincount(boot, minlength=f.n_train)
    return out


def oob_predict(f: FittedForest, train: Cohort, t: float) -> np.ndarray:
    """Out-of-bag survival at ``t``; NaN for records that were in every bootstrap."""
    H = f.chf_matrix(train, t)
    oob = inbag_counts(f) == 0
    n_oob = oob.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(oob, H, 0.0).sum(axis=1) / n_oob
    return np.where(n_oob > 0, np.exp(-mean), np.nan)


def split_counts(f: FittedForest, depth: int = 0, by_field: bool = True) -> dict:
    """How often each feature (or source field) splits nodes at ``depth``."""
    d = f.trees.depth_of_nodes()
    feat = f.trees.nodes["feature"]
    used = feat[(d == depth) & (feat >= 0)]
    names = f.feature_names
    out = {}
    for j in used:
        key = source_field(names[j]) if by_field else names[j]
        out[key] = out.get(key, 0) + 1
    return out
