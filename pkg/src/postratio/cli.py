"""Command-line interface.

BLAS threading is pinned to one thread before numpy is first imported so
that experiment outputs are byte-identical regardless of the machine's
thread count.
"""

import os
import sys

for _var in (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    os.environ[_var] = "1"

import json

import click
import numpy as np

from . import experiments as experiments_mod
from . import figures as figures_mod
from . import ratio as ratio_mod
from .classifiers import classifier_from_json, fit_kernel_logreg, fit_logreg
from .composite import CompositeModel, estimate_kl
from .data import CsvSpec, load_csv, load_features_csv
from .experiments import EXPERIMENT_NAMES, ExperimentConfig


def _load_pair(target_path, source_path, remap01, header):
    spec = CsvSpec(has_header=header, remap01=remap01)
    return load_csv(target_path, spec), load_csv(source_path, spec)


def _resolve_k(k_option, target, sources, lam):
    """Returns (model, report) honoring a fixed k, the schedule rule, or selection."""
    if k_option == "select":
        return ratio_mod.select_k(target, sources, lam=lam)
    if k_option == "schedule":
        k = ratio_mod.schedule_k(len(sources))
    else:
        k = int(k_option)
    return ratio_mod.fit(target, sources, k, lam)


def _resolve_lambda(lam_option, target, sources, k_option):
    if lam_option != "select":
        return float(lam_option)
    if k_option in ("select", "schedule"):
        k = ratio_mod.schedule_k(len(sources))
    else:
        k = int(k_option)
    return ratio_mod.select_lambda(target, sources, k)


@click.group()
def cli():
    """Posterior-ratio transfer learning toolkit."""


_data_options = [
    click.option("--remap01", is_flag=True, help="Accept {0,1} labels and map 0 to -1."),
    click.option("--header", is_flag=True, help="Skip a header row in input CSVs."),
    click.option("--seed", type=int, default=0, show_default=True),
]


def data_options(fn):
    for opt in reversed(_data_options):
        fn = opt(fn)
    return fn


@cli.command()
@click.argument("target_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("source_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--report", "report_path", type=click.Path(dir_okay=False))
@click.option("--k", default="select", show_default=True,
              help="Neighbor count: an integer, 'schedule', or 'select'.")
@click.option("--lam", "--lambda", default="1e-3", show_default=True,
              help="Regularization strength, or 'select' for likelihood CV.")
@click.option("--source-model", type=click.Choice(["linear", "kernel"]), default="linear",
              show_default=True)
@data_options
def fit(target_csv, source_csv, out_path, report_path, k, lam, source_model, remap01, header, seed):
    """Fit the composite model: ratio on (target, source) times a source classifier."""
    target, sources = _load_pair(target_csv, source_csv, remap01, header)
    lam_value = _resolve_lambda(lam, target, sources, k)
    ratio_model, report = _resolve_k(k, target, sources, lam_value)
    if source_model == "linear":
        source_clf = fit_logreg(sources, l2=1e-6)
    else:
        source_clf = fit_kernel_logreg(sources)
    model = CompositeModel(ratio_model, source_clf)
    with open(out_path, "w") as fh:
        json.dump(model.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    report_obj = {
        "final_objective": report.final_objective,
        "regularized_objective": report.regularized_objective,
        "grad_norm": report.grad_norm,
        "iterations": report.iterations,
        "converged": report.converged,
        "k": ratio_model.fitted_k,
        "lambda": ratio_model.lam,
        "kl_estimate": estimate_kl(report.final_objective),
        "k_trace": [[int(kk), float(mse)] for kk, mse in report.k_trace],
    }
    if report_path:
        with open(report_path, "w") as fh:
            json.dump(report_obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
    click.echo(f"fitted k={ratio_model.fitted_k} lambda={ratio_model.lam:g} "
               f"kl_estimate={report_obj['kl_estimate']:.6g}")


@cli.command()
@click.argument("model_json", type=click.Path(exists=True, dir_okay=False))
@click.argument("x_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--header", is_flag=True, help="Skip a header row in the input CSV.")
def predict(model_json, x_csv, out_path, header):
    """Predict labels and posterior probabilities for feature rows."""
    with open(model_json) as fh:
        obj = json.load(fh)
    if obj.get("kind") == "composite":
        model = CompositeModel.from_json(obj)
    else:
        model = classifier_from_json(obj)
    X = load_features_csv(x_csv, has_header=header)
    p_plus = model.predict_proba(X)
    labels = np.where(p_plus >= 0.5, 1, -1)
    with open(out_path, "w") as fh:
        fh.write("label,p_plus,p_minus\n")
        for y, p in zip(labels, p_plus):
            fh.write(f"{int(y)},{float(p)!r},{float(1.0 - p)!r}\n")
    click.echo(f"wrote {len(labels)} predictions to {out_path}")


@cli.command()
@click.argument("target_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("source_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--k", default="select", show_default=True)
@click.option("--lam", "--lambda", default="1e-3", show_default=True)
@data_options
def kl(target_csv, source_csv, k, lam, remap01, header, seed):
    """Estimate the conditional KL divergence between target and source posteriors."""
    target, sources = _load_pair(target_csv, source_csv, remap01, header)
    lam_value = _resolve_lambda(lam, target, sources, k)
    _, report = _resolve_k(k, target, sources, lam_value)
    click.echo(f"{estimate_kl(report.final_objective):.10g}")


@cli.command("select-k")
@click.argument("target_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("source_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--k-grid", default=None, help="Comma-separated candidates (default: powers of 2).")
@click.option("--lam", "--lambda", type=float, default=1e-3, show_default=True)
@data_options
def select_k_cmd(target_csv, source_csv, k_grid, lam, remap01, header, seed):
    """Run the alternating k-selection heuristic and print the trace."""
    target, sources = _load_pair(target_csv, source_csv, remap01, header)
    grid = [int(v) for v in k_grid.split(",")] if k_grid else None
    model, report = ratio_mod.select_k(target, sources, grid, lam, seed=seed)
    for round_no, (kk, mse) in enumerate(report.k_trace, start=1):
        click.echo(f"round {round_no}: k={kk} holdout_mse={mse:.6g}")
    click.echo(f"selected k={model.fitted_k}")


@cli.command()
@click.argument("name", type=click.Choice(EXPERIMENT_NAMES))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "output_dir", required=True, type=click.Path(file_okay=False))
@click.option("--figures/--no-figures", default=True, show_default=True,
              help="Render matplotlib figures next to the CSV output.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def experiment(name, config_path, output_dir, figures, seed):
    """Run a synthetic experiment; writes records.csv, aggregates.csv and figures."""
    if config_path:
        with open(config_path) as fh:
            obj = json.load(fh)
        obj["experiment"] = name
        cfg = ExperimentConfig.from_json(obj)
    else:
        cfg = experiments_mod.default_config(name)
    if seed is not None:
        cfg.seed = seed
    rows = experiments_mod.run_experiment(cfg, output_dir)
    click.echo(f"wrote {len(rows)} records to {output_dir}")
    if figures:
        for path in figures_mod.render_experiment(name, output_dir):
            click.echo(f"rendered {path}")


def main(argv=None):
    try:
        return cli.main(args=argv, standalone_mode=False) or 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except Exception as exc:  # runtime failure
        click.echo(f"error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
