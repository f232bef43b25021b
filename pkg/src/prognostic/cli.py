"""Command-line entry point: ``prognostic <subcommand>``.

Failures exit with the code of their error category (see ``errors``);
unreadable files exit with code 10.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .errors import ConfigError, PrognosticError

IO_EXIT_CODE = 10


def _load_models(path, profile=None):
    from .pipeline import ModelSet

    m = ModelSet.load(path)
    return replace(m, profile=profile) if profile else m


def _cohort(path, horizon):
    from .cohort import ingest_csv

    return ingest_csv(path, horizon=horizon, provenance=str(path))


def _write_json(obj, path):
    from .pipeline import _jsonable

    Path(path).write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Survival prognostication: synthesise, train, evaluate, explain."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@cli.command()
@click.option("--config", "config_path", type=click.Path(), help="Generator config JSON.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n", type=int, help="Override the cohort size.")
@click.option("--out", required=True, type=click.Path(), help="Cohort CSV to write.")
@click.option("--truth", type=click.Path(), help="Also write true survival at the horizon per record.")
def synth(config_path, seed, n, out, truth):
    """Draw a synthetic cohort."""
    from .synth import GeneratorConfig, generate_synthetic

    cfg = GeneratorConfig.load(config_path) if config_path else GeneratorConfig()
    if n is not None:
        cfg = replace(cfg, n=n)
    sc = generate_synthetic(cfg, seed)
    sc.cohort.to_csv(out)
    if truth:
        with open(truth, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "true_survival"])
            for i, s in enumerate(sc.true_survival):
                w.writerow([i, repr(float(s))])
    click.echo(f"wrote {len(sc.cohort)} records ({sc.cohort.n_events} events) to {out}")


@cli.command("ingest-check")
@click.argument("path", type=click.Path())
@click.option("--horizon", type=float, default=5.0, show_default=True)
@click.option("--profile", default="ma27", show_default=True)
def ingest_check(path, horizon, profile):
    """Validate a cohort CSV and summarise missingness and baseline validity."""
    from .baseline import validity_mask
    from .cohort import COVARIATES
    from .mapping import load_profile, map_cohort

    c = _cohort(path, horizon)
    valid = validity_mask(map_cohort(c, load_profile(profile)))
    summary = {
        "records": len(c),
        "events": c.n_events,
        "dropped_rows": c.dropped,
        "missing_fraction": {k: float(1 - c.present[k].mean()) for k in COVARIATES},
        "baseline_invalid_fraction": float(1 - valid.mean()),
    }
    click.echo(json.dumps(summary, indent=1, sort_keys=True))


@cli.command()
@click.option("--config", "config_path", type=click.Path(), help="Experiment config JSON.")
@click.option("--seeds", type=int, help="Run seeds 0..N-1 instead of the configured list.")
@click.option("--seed", type=int, multiple=True, help="Run these seeds (repeatable).")
@click.option("--objective", type=click.Choice(["ici", "auc"]))
@click.option("--rebalance/--no-rebalance", default=None)
@click.option("--jobs", type=int, help="Seeds run in parallel processes.")
@click.option("--out", type=click.Path(), help="Output directory.")
def train(config_path, seeds, seed, objective, rebalance, jobs, out):
    """Run the full protocol and write report.json, metrics.csv, plot data and models."""
    from .pipeline import ExperimentConfig, run_experiment, write_outputs

    cfg = ExperimentConfig.load(config_path) if config_path else ExperimentConfig()
    changes = {}
    if seeds is not None:
        changes["seeds"] = list(range(seeds))
    if seed:
        changes["seeds"] = list(seed)
    if objective:
        changes["objective"] = objective
    if rebalance is not None:
        changes["rebalance"] = rebalance
    if jobs:
        changes["jobs"] = jobs
    if out:
        changes["out_dir"] = out
    cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **changes})
    report, final, results = run_experiment(cfg)
    write_outputs(report, final, results, cfg.out_dir)
    click.echo(f"report written to {Path(cfg.out_dir) / 'report.json'}")


@cli.command()
@click.option("--models", required=True, type=click.Path(), help="Saved model directory.")
@click.option("--data", required=True, type=click.Path(), help="Cohort CSV.")
@click.option("--t", "t", type=float, default=5.0, show_default=True)
@click.option("--out", type=click.Path(), help="Write metrics JSON here as well as to stdout.")
def evaluate(models, data, t, out):
    """ICI and AUC of all five models on a cohort, overall and by baseline validity."""
    from .pipeline import evaluate_models

    m = _load_models(models)
    _, overall, strata = evaluate_models(m, _cohort(data, t), t)
    result = {"metrics": overall, "stratified": strata, "t": t}
    if out:
        _write_json(result, out)
    click.echo(json.dumps(result, indent=1, sort_keys=True, default=str))


@cli.command()
@click.option("--models", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path())
@click.option("--t", "t", type=float, default=5.0, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Predictions CSV.")
def predict(models, data, t, out):
    """Survival probability at t for every record and model (blank = invalid)."""
    from .pipeline import MODELS

    m = _load_models(models)
    c = _cohort(data, max(t, 5.0))
    preds = m.predict(c, t)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row"] + list(MODELS))
        for i in range(len(c)):
            w.writerow([i] + ["" if np.isnan(preds[k][i]) else repr(float(preds[k][i])) for k in MODELS])
    click.echo(f"wrote {len(c)} predictions to {out}")


@cli.command()
@click.option("--models", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path(), help="Records to explain.")
@click.option("--background", "background_path", type=click.Path(), help="Background cohort (default: --data).")
@click.option("--model", "model_name", default="ensemble", show_default=True,
              type=click.Choice(["baseline", "baseline_tuned", "forest", "boost", "ensemble"]))
@click.option("--records", type=int, default=50, show_default=True, help="Explain the first N records.")
@click.option("--m", "m", type=int, default=200, show_default=True, help="Monte Carlo draws per record.")
@click.option("--background-size", type=int, default=500, show_default=True)
@click.option("--t", "t", type=float, default=5.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
def explain(models, data, background_path, model_name, records, m, background_size, t, seed, out):
    """Monte Carlo SHAP attributions over patient fields."""
    from .explain import sample_background, shap_cohort, shap_summary, write_matrix_csv, write_summary_csv

    if m < 1:
        raise ConfigError("--m must be at least 1")
    ms = _load_models(models)
    c = _cohort(data, t)
    bg = sample_background(_cohort(background_path, t) if background_path else c, background_size, seed)

    def f(k):
        return ms.predict(k, t)[model_name]

    results = shap_cohort(f, c.subset(np.arange(min(records, len(c)))), bg, m, seed)
    summary = shap_summary(results)
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    write_summary_csv(summary, d / "shap_summary.csv")
    write_matrix_csv(summary, d / "shap_matrix.csv")
    _write_json({
        "model": model_name, "t": t, "m": m, "background_size": len(bg), "records_explained": len(results),
        "records_skipped": min(records, len(c)) - len(results), "seed": seed,
        "redrawn_chains": int(sum(r.skipped for r in results)),
        "note": "m and background size are package defaults unless overridden",
    }, d / "explain.json")
    click.echo(f"explained {len(results)} records; summary in {d / 'shap_summary.csv'}")


@cli.command("external-validate")
@click.option("--models", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path(), help="External cohort CSV.")
@click.option("--profile", help="Mapping profile for the external cohort (ma27, seer, team or a JSON path).")
@click.option("--t", "t", type=float, default=5.0, show_default=True)
@click.option("--bootstrap", "B", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), help="Write the result JSON here.")
def external_validate_cmd(models, data, profile, t, B, seed, out):
    """Evaluate saved models on an external cohort with bootstrap intervals."""
    from .pipeline import external_validate

    result = external_validate(_load_models(models, profile), _cohort(data, t), t, B, seed)
    if out:
        _write_json(result, out)
    click.echo(json.dumps(result, indent=1, sort_keys=True, default=str))


@cli.command("plot-data")
@click.option("--models", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path())
@click.option("--t", "t", type=float, default=5.0, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
def plot_data(models, data, t, out):
    """Calibration and ROC curve CSVs for every model."""
    from .pipeline import write_plot_data

    c = _cohort(data, t)
    written = write_plot_data(_load_models(models).predict(c, t), c.time, c.event, t, out)
    click.echo(f"plot data for {', '.join(written)} in {out}")


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="prognostic", standalone_mode=False)
    except PrognosticError as exc:
        click.echo(f"error [{exc.category}]: {exc}", err=True)
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except OSError as exc:
        click.echo(f"error [io]: {exc}", err=True)
        sys.exit(IO_EXIT_CODE)
    sys.exit(0)


if __name__ == "__main__":
    main()
