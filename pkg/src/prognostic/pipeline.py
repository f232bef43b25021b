"""Experiment orchestration: splits, grid search, fine-tuning, ensembling, aggregation, reporting.

One seed runs the internal-validation protocol:

1. split the cohort 60/20/20 into A (fit), B (tune) and C (validate);
2. grid-search the forest and booster hyperparameters by fitting on A and
   scoring on B;
3. refit both learners and fine-tune the baseline on A+B;
4. search the ensemble weights on A+B;
5. evaluate all five models on C, overall and split by baseline validity.

After every seed has run, hyperparameters are chosen by majority vote,
fine-tuned parameters and ensemble weights are averaged, and the final
learners are refit on the full cohort.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, metrics
from .baseline import (
    PARAM_NAMES, BaselineParamVector, default_nm_config, fine_tune_result, load_params,
    predict_table, reference_params, save_params,
)
from .boost import BOOST_GRID, BoostHyperparams, FittedBooster, booster_predict_cohort, fit_booster
from .cohort import Cohort, ingest_csv, split_cohort
from .ensemble import COMPONENTS, EnsembleWeights, combine_arrays, score, search_weights
from .errors import ConfigError, FitError, PrognosticError, UndefinedMetricError, ValidationError
from .forest import (
    FOREST_GRID, SPLITRULES, FittedForest, ForestHyperparams, fit_forest, forest_predict_cohort,
    oob_predict,
)
from .mapping import load_profile, map_cohort
from .optimize import BOConfig
from .rebalance import RoseConfig, rose_resample
from .synth import GeneratorConfig, generate_synthetic

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
MODELS = ("baseline", "baseline_tuned", "forest", "boost", "ensemble")
METRICS = ("ici", "auc")
# fields that change where or how fast results are produced, never what they are
_NON_SEMANTIC = ("out_dir", "jobs")


@dataclass
class ExperimentConfig:
    # {"kind": "synthetic", "generator": {...}, "seed": int} or {"kind": "csv", "path": str}
    source: dict = field(default_factory=lambda: {"kind": "synthetic", "generator": {"version": 1}, "seed": 0})
    objective: str = "ici"
    horizon: float = 5.0
    rebalance: bool = False
    rose: dict = field(default_factory=dict)  # RoseConfig fields except the seed
    forest_grid: dict = field(default_factory=lambda: {k: list(v) for k, v in FOREST_GRID.items()})
    boost_grid: dict = field(default_factory=lambda: {**{k: list(v) for k, v in BOOST_GRID.items()},
                                                      "nrounds": [500]})
    seeds: list = field(default_factory=lambda: list(range(10)))
    bootstrap: int = 1000
    profile: str = "ma27"
    baseline_params: Optional[str] = None  # None: bundled reference vector
    nm_max_evals: int = 2000
    bo_evals: int = 60
    max_bins: int = 32
    bernstein: bool = True
    jobs: int = 1
    out_dir: str = "results"
    version: int = CONFIG_VERSION

    def __post_init__(self):
        if self.objective not in METRICS:
            raise ConfigError(f"objective must be one of {METRICS}, got {self.objective!r}")
        if isinstance(self.seeds, int):
            self.seeds = list(range(self.seeds))
        self.seeds = [int(s) for s in self.seeds]
        if len(self.seeds) < 1:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.bootstrap < 1 or self.jobs < 1:
            raise ConfigError("bootstrap and jobs must be positive")
        if self.source.get("kind") not in ("synthetic", "csv"):
            raise ConfigError("source.kind must be 'synthetic' or 'csv'")
        for name, grid in (("forest_grid", self.forest_grid), ("boost_grid", self.boost_grid)):
            if not grid or any(len(v) == 0 for v in grid.values()):
                raise ConfigError(f"{name} must be nonempty in every dimension")
        RoseConfig(**self.rose)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != CONFIG_VERSION:
            raise ConfigError(f"experiment config must carry version {CONFIG_VERSION}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from None

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _NON_SEMANTIC}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def forest_points(self):
        g = self.forest_grid
        return [
            ForestHyperparams(ntree=int(nt), mtry=int(m), nodesize=int(ns), splitrule=sr,
                              max_bins=self.max_bins, bernstein=self.bernstein)
            for nt in g["ntree"] for m in g["mtry"] for ns in g["nodesize"] for sr in g["splitrule"]
        ]

    def boost_points(self):
        g = self.boost_grid
        return [
            BoostHyperparams(eta=float(e), max_depth=int(d), subsample=float(s), colsample_bytree=float(c),
                             lam=float(l), nrounds=int(r), max_bins=self.max_bins)
            for e in g["eta"] for d in g["max_depth"] for s in g["subsample"]
            for c in g["colsample_bytree"] for l in g["lam"] for r in g.get("nrounds", [500])
        ]


def load_source(cfg: ExperimentConfig) -> Cohort:
    src = cfg.source
    if src["kind"] == "synthetic":
        gen = GeneratorConfig.from_dict({**src.get("generator", {}), "version": 1})
        return generate_synthetic(replace(gen, horizon=cfg.horizon), int(src.get("seed", 0))).cohort
    return ingest_csv(src["path"], horizon=cfg.horizon, provenance=str(src["path"]))


def _baseline_start(cfg: ExperimentConfig) -> BaselineParamVector:
    return reference_params() if cfg.baseline_params is None else load_params(cfg.baseline_params)


# ---------------------------------------------------------------- grid search


@dataclass
class GridResult:
    best: object
    score: float
    scores: list  # (hyperparams, score) in grid order; failed points score None
    n_evaluated: int


def _pick(scored, capacity):
    ok = [(hp, s) for hp, s in scored if s is not None and math.isfinite(s)]
    if not ok:
        raise FitError("every grid point failed to fit or to score")
    top = max(s for _, s in ok)
    tied = [hp for hp, s in ok if s == top]
    return min(tied, key=capacity), top


def grid_search_forest(points, train_a: Cohort, test_b: Cohort, objective: str, t: float, seed: int) -> GridResult:
    """Fit each forest on A and score on B.

    Points differing only in ``ntree`` share one fit of the largest size:
    a forest's first k trees are exactly the forest fitted with k trees.
    """
    if not points:
        raise ConfigError("grid must be nonempty")
    groups = {}
    for hp in points:
        groups.setdefault(replace(hp, ntree=1), []).append(hp)
    scores = {}
    for key, members in groups.items():
        big = replace(key, ntree=max(hp.ntree for hp in members))
        try:
            f = fit_forest(train_a, big, seed)
            H = f.chf_matrix(test_b, t)
        except PrognosticError as exc:
            log.warning("forest grid point %s failed: %s", big, exc)
            for hp in members:
                scores[hp] = None
            continue
        for hp in members:
            pred = np.exp(-H[:, :hp.ntree].mean(axis=1))
            scores[hp] = _safe_score(pred, test_b, t, objective)
    scored = [(hp, scores[hp]) for hp in points]
    best, top = _pick(scored, lambda hp: hp.capacity_key())
    return GridResult(best, top, scored, len(points))


def grid_search_boost(points, train_a: Cohort, test_b: Cohort, objective: str, t: float, seed: int) -> GridResult:
    if not points:
        raise ConfigError("grid must be nonempty")
    scored = []
    for hp in points:
        try:
            m = fit_booster(train_a, hp, seed)
            scored.append((hp, _safe_score(booster_predict_cohort(m, test_b, t), test_b, t, objective)))
        except PrognosticError as exc:
            log.warning("boosting grid point %s failed: %s", hp, exc)
            scored.append((hp, None))
    best, top = _pick(scored, lambda hp: (hp.nrounds,) + hp.capacity_key())
    return GridResult(best, top, scored, len(points))


def grid_search(kind: str, points, train_a, test_b, objective="ici", t=5.0, seed=0) -> GridResult:
    if kind == "forest":
        return grid_search_forest(points, train_a, test_b, objective, t, seed)
    if kind == "boost":
        return grid_search_boost(points, train_a, test_b, objective, t, seed)
    raise ConfigError(f"unknown model kind {kind!r}")


def _safe_score(pred, c: Cohort, t, objective):
    try:
        return float(score(pred, c.time, c.event, t, objective))
    except UndefinedMetricError:
        return None


# ---------------------------------------------------------------- evaluation


def evaluate_predictions(pred, times, events, t) -> dict:
    """ICI and AUC over records with a prediction; undefined metrics are None."""
    pred = np.asarray(pred, dtype=float)
    ok = ~np.isnan(pred)
    out = {"n": int(ok.sum()), "n_invalid": int((~ok).sum()), "events": int(np.sum(events[ok]))}
    for name in METRICS:
        try:
            if name == "ici":
                v = metrics.ici(pred[ok], times[ok], events[ok], t)
            else:
                v = metrics.ipcw_auc(-pred[ok], times[ok], events[ok], t)
            out[name] = float(v)
        except (UndefinedMetricError, ValidationError):
            out[name] = None
    return out


def _assert_disjoint(**sets):
    names = list(sets)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            shared = np.intersect1d(sets[names[i]], sets[names[j]])
            if shared.size:
                raise ValidationError(f"leakage: {names[i]} and {names[j]} share {shared.size} records")


@dataclass
class ModelSet:
    """The five predictors, usable on any cohort."""

    reference: BaselineParamVector
    tuned: BaselineParamVector
    forest: FittedForest
    boost: FittedBooster
    weights: EnsembleWeights
    profile: str = "ma27"

    def predict(self, c: Cohort, t: float) -> dict:
        table = map_cohort(c, load_profile(self.profile))
        ref, _ = predict_table(self.reference, table, t)
        tuned, _ = predict_table(self.tuned, table, t)
        fp = forest_predict_cohort(self.forest, c, t)
        bp = booster_predict_cohort(self.boost, c, t)
        ens = combine_arrays(np.column_stack([tuned, fp, bp]), self.weights)
        return {"baseline": ref, "baseline_tuned": tuned, "forest": fp, "boost": bp, "ensemble": ens}

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_params(self.reference, d / "baseline_reference.json")
        save_params(self.tuned, d / "baseline_tuned.json")
        self.forest.save(d / "forest.npz")
        self.boost.save(d / "boost.npz")
        with open(d / "ensemble.json", "w") as fh:
            json.dump({"version": 1, "weights": self.weights.to_dict(), "profile": self.profile}, fh,
                      indent=1, sort_keys=True)

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        if not (d / "ensemble.json").exists():
            raise ConfigError(f"{d} does not hold a saved model set")
        with open(d / "ensemble.json") as fh:
            e = json.load(fh)
        w = e["weights"]
        return cls(
            load_params(d / "baseline_reference.json"),
            load_params(d / "baseline_tuned.json"),
            FittedForest.load(d / "forest.npz"),
            FittedBooster.load(d / "boost.npz"),
            EnsembleWeights(w["baseline"], w["forest"], w["boost"]),
            e.get("profile", "ma27"),
        )


def _rose(c: Cohort, cfg: ExperimentConfig, seed: int, stage: int) -> Cohort:
    if not cfg.rebalance:
        return c
    return rose_resample(c, RoseConfig(**{**cfg.rose, "seed": int(seed) * 1000 + stage}))


def evaluate_models(models: ModelSet, c: Cohort, t: float):
    """Overall and validity-stratified metrics of all five models on ``c``."""
    preds = models.predict(c, t)
    valid = ~np.isnan(preds["baseline_tuned"])
    overall = {m: evaluate_predictions(preds[m], c.time, c.event, t) for m in MODELS}
    strata = {}
    for label, mask in (("valid", valid), ("invalid", ~valid)):
        strata[label] = {
            m: evaluate_predictions(preds[m][mask], c.time[mask], c.event[mask], t) if mask.any()
            else {"n": 0, "n_invalid": 0, "events": 0, "ici": None, "auc": None}
            for m in MODELS
        }
    return preds, overall, strata


def run_seed(cfg: ExperimentConfig, cohort: Cohort, seed: int) -> dict:
    """Internal validation for one seed; returns a JSON-ready result with the validation predictions."""
    try:
        return _run_seed(cfg, cohort, seed)
    except PrognosticError as exc:
        exc.args = (f"seed {seed}: {exc}",) + exc.args[1:]
        raise


def _run_seed(cfg: ExperimentConfig, cohort: Cohort, seed: int) -> dict:
    t, obj = cfg.horizon, cfg.objective
    split = split_cohort(cohort, seed)
    A, B, C = split.train_a, split.test_b, split.valid_c
    _assert_disjoint(fit=A.ids, tune=B.ids, validate=C.ids)

    fit_a = _rose(A, cfg, seed, 1)
    g_forest = grid_search_forest(cfg.forest_points(), fit_a, B, obj, t, seed)
    g_boost = grid_search_boost(cfg.boost_points(), fit_a, B, obj, t, seed)

    AB = Cohort.concat([A, B])
    fit_ab = _rose(AB, cfg, seed, 2)
    forest = fit_forest(fit_ab, g_forest.best, seed)
    boost = fit_booster(fit_ab, g_boost.best, seed)
    p0 = _baseline_start(cfg)
    ft = fine_tune_result(p0, fit_ab, obj, t, replace(default_nm_config(seed), max_evals=cfg.nm_max_evals),
                          load_profile(cfg.profile))

    # ensemble weights on the fitting data; forest contributes out-of-bag predictions
    table_ab = map_cohort(fit_ab, load_profile(cfg.profile))
    comp = np.column_stack([
        predict_table(ft.params, table_ab, t)[0],
        oob_predict(forest, fit_ab, t),
        booster_predict_cohort(boost, fit_ab, t),
    ])
    comp[:, 1] = np.where(np.isnan(comp[:, 1]), forest_predict_cohort(forest, fit_ab, t), comp[:, 1])
    ws = search_weights(comp, fit_ab.time, fit_ab.event, obj, t, BOConfig(dim=2, n_eval=cfg.bo_evals, seed=seed))

    models = ModelSet(p0, ft.params, forest, boost, ws.weights, cfg.profile)
    _assert_disjoint(fitted=np.concatenate([A.ids, B.ids]), validate=C.ids)
    preds, overall, strata = evaluate_models(models, C, t)
    return {
        "seed": int(seed),
        "sizes": {"fit": len(A), "tune": len(B), "validate": len(C)},
        "forest": {"best": asdict(g_forest.best), "score": g_forest.score, "n_evaluated": g_forest.n_evaluated},
        "boost": {"best": asdict(g_boost.best), "score": g_boost.score, "n_evaluated": g_boost.n_evaluated},
        "fine_tune": {"initial": ft.initial_objective, "final": ft.objective, "n_evals": ft.n_evals,
                      "params": [float(v) for v in ft.params.values]},
        "weights": ws.weights.to_dict(),
        "metrics": overall,
        "stratified": strata,
        "_validation": {"time": C.time, "event": C.event, "preds": preds},
    }


# ---------------------------------------------------------------- aggregation


def _vote(values, order=None):
    """Majority vote; ties go to the smaller (lower-capacity) value."""
    counts = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    key = (lambda v: order.index(v)) if order else (lambda v: v)
    chosen = min(counts, key=lambda v: (-counts[v], key(v)))
    return chosen, {str(k): counts[k] for k in sorted(counts, key=key)}


def _summary(vals):
    v = np.array([x for x in vals if x is not None], dtype=float)
    if v.size == 0:
        return {"median": None, "q1": None, "q3": None, "min": None, "max": None, "n": 0}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3), "min": float(v.min()),
            "max": float(v.max()), "n": int(v.size)}


def aggregate(results: list) -> dict:
    if not results:
        raise ConfigError("aggregate needs at least one seed")
    hp = {}
    for kind, order in (("forest", {"splitrule": list(SPLITRULES)}), ("boost", {})):
        hp[kind] = {}
        for name in results[0][kind]["best"]:
            chosen, votes = _vote([r[kind]["best"][name] for r in results], order.get(name))
            hp[kind][name] = {"chosen": chosen, "votes": votes}
    params = np.mean([r["fine_tune"]["params"] for r in results], axis=0)
    w = np.mean([[r["weights"][k] for k in COMPONENTS] for r in results], axis=0)
    weights = EnsembleWeights.normalised(w)
    summary = {m: {k: _summary([r["metrics"][m][k] for r in results]) for k in METRICS} for m in MODELS}
    strat = {
        s: {m: {k: _summary([r["stratified"][s][m][k] for r in results]) for k in METRICS} for m in MODELS}
        for s in ("valid", "invalid")
    }
    invalid = {m: int(sum(r["metrics"][m]["n_invalid"] for r in results)) for m in MODELS}
    return {
        "hyperparameters": hp,
        "baseline_params": {n: float(v) for n, v in zip(PARAM_NAMES, params)},
        "ensemble_weights": weights.to_dict(),
        "summary": summary,
        "stratified": strat,
        "invalid_predictions": invalid,
        "seeds": [{k: v for k, v in r.items() if not k.startswith("_")} for r in results],
    }


def voted_hyperparams(report: dict, cfg: ExperimentConfig):
    f = {k: v["chosen"] for k, v in report["hyperparameters"]["forest"].items()}
    b = {k: v["chosen"] for k, v in report["hyperparameters"]["boost"].items()}
    return ForestHyperparams(**f), BoostHyperparams(**b)


# ---------------------------------------------------------------- whole experiment


def _seed_worker(args):
    cfg, cohort, seed = args
    return run_seed(cfg, cohort, seed)


def run_experiment(cfg: ExperimentConfig, cohort: Optional[Cohort] = None):
    """All seeds, aggregation, then the full-data refit. Returns (report, final models, per-seed results)."""
    cohort = cohort if cohort is not None else load_source(cfg)
    jobs = [(cfg, cohort, s) for s in cfg.seeds]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            results = list(ex.map(_seed_worker, jobs))
    else:
        results = [_seed_worker(j) for j in jobs]

    # every internal-validation metric exists before any full-data refit
    report = aggregate(results)
    fhp, bhp = voted_hyperparams(report, cfg)
    final_seed = cfg.seeds[0]
    full = _rose(cohort, cfg, final_seed, 3)
    p0 = _baseline_start(cfg)
    final = ModelSet(
        p0,
        p0.with_values(np.array([report["baseline_params"][n] for n in PARAM_NAMES])),
        fit_forest(full, fhp, final_seed),
        fit_booster(full, bhp, final_seed),
        EnsembleWeights(**{f"w_{k}": v for k, v in report["ensemble_weights"].items()}),
        cfg.profile,
    )
    report = {
        "software": {"package": "prognostic", "version": __version__},
        "config_hash": cfg.config_hash(),
        "config": {k: v for k, v in cfg.to_dict().items() if k not in _NON_SEMANTIC},
        "cohort": {"n": len(cohort), "events": cohort.n_events, "provenance": cohort.provenance},
        "objective": cfg.objective,
        "horizon": cfg.horizon,
        **report,
        "final": {"forest": asdict(fhp), "boost": asdict(bhp), "seed": final_seed},
    }
    return report, final, results


# ---------------------------------------------------------------- external validation


def external_validate(models: ModelSet, external: Cohort, t: float = 5.0, B: int = 1000, seed: int = 0) -> dict:
    """Point metrics with percentile bootstrap intervals for all five models; no refitting."""
    preds = models.predict(external, t)
    out = {}
    for m in MODELS:
        p = preds[m]
        ok = ~np.isnan(p)
        entry = {"n": int(ok.sum()), "n_invalid": int((~ok).sum())}
        data = (p[ok], external.time[ok], external.event[ok])
        for name, fn in (("ici", lambda a, b, c: metrics.ici(a, b, c, t)),
                         ("auc", lambda a, b, c: metrics.ipcw_auc(-a, b, c, t))):
            try:
                value = float(fn(*data))
                ci = metrics.bootstrap_ci(fn, data, B, seed)
                entry[name] = {"value": value, "lo": ci.lo, "hi": ci.hi, "n_undefined": ci.n_undefined}
            except (UndefinedMetricError, ValidationError) as exc:
                entry[name] = {"value": None, "undefined": str(exc)}
        out[m] = entry
    return out


# ---------------------------------------------------------------- reporting


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(_jsonable(report), sort_keys=True, indent=1) + "\n"


def write_metrics_csv(results: list, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "stratum", "model", "metric", "value", "n", "n_invalid"])
        for r in results:
            rows = [("all", r["metrics"])] + [(s, r["stratified"][s]) for s in ("valid", "invalid")]
            for stratum, block in rows:
                for m in MODELS:
                    for k in METRICS:
                        v = block[m][k]
                        w.writerow([r["seed"], stratum, m, k, "" if v is None else repr(v), block[m]["n"],
                                    block[m]["n_invalid"]])


def write_plot_data(preds: dict, times, events, t, directory, suffix=""):
    """Calibration and ROC CSVs per model; models whose curves are undefined are skipped."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for m, p in preds.items():
        ok = ~np.isnan(p)
        try:
            curve = metrics.calibration_plot_data(p[ok], times[ok], events[ok], t)
            metrics.write_calibration_csv(curve, d / f"calibration_{m}{suffix}.csv")
            roc = metrics.roc_curve_data(-p[ok], times[ok], events[ok], t)
            metrics.write_roc_csv(roc, d / f"roc_{m}{suffix}.csv")
            written.append(m)
        except (UndefinedMetricError, ValidationError) as exc:
            log.warning("no plot data for %s: %s", m, exc)
    return written


def write_outputs(report: dict, final: ModelSet, results: list, out_dir):
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "report.json").write_text(dumps_report(report))
    write_metrics_csv(results, d / "metrics.csv")
    for r in results:
        v = r["_validation"]
        write_plot_data(v["preds"], v["time"], v["event"], report["horizon"], d / "plots", f"_seed{r['seed']}")
    final.save(d / "models")
