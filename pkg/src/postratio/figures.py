"""Render report figures from experiment output directories.

Figures are produced from the written CSV files, never from in-memory
state, so they can be regenerated after the fact.  PNG metadata is
pinned so reruns stay byte-identical.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import read_records

_PNG_METADATA = {"Software": "postratio"}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def _aggregates_by_method(rows, metric):
    by_method = defaultdict(dict)
    for r in rows:
        if r.metric == metric:
            by_method[r.method].setdefault(r.n, []).append(r.value)
    return by_method


def render_kl_convergence(output_dir) -> list[Path]:
    output_dir = Path(output_dir)
    rows = read_records(output_dir / "records.csv")
    by_method = _aggregates_by_method(rows, "kl_estimate")
    kl_true = next((r.value for r in rows if r.metric == "kl_true"), None)

    fig, ax = plt.subplots(figsize=(6, 4))
    for method, groups in sorted(by_method.items()):
        ns = sorted(groups)
        means = [np.mean(groups[n]) for n in ns]
        errs = [np.std(groups[n], ddof=1) / np.sqrt(len(groups[n])) if len(groups[n]) > 1 else 0.0 for n in ns]
        ax.errorbar(ns, means, yerr=errs, marker="o", capsize=3, label=method)
    if kl_true is not None:
        ax.axhline(kl_true, color="tab:blue", linestyle="--", label="true KL (quadrature)")
    ax.set_xscale("log")
    ax.set_xlabel("target sample size n")
    ax.set_ylabel("KL estimate")
    ax.legend()
    fig.tight_layout()
    path = output_dir / "kl_convergence.png"
    _save(fig, path)
    return [path]


def render_joint_vs_separated(output_dir) -> list[Path]:
    output_dir = Path(output_dir)
    rows = read_records(output_dir / "records.csv")
    by_method = _aggregates_by_method(rows, "neg_holdout_loglik")

    fig, ax = plt.subplots(figsize=(6, 4))
    for method, groups in sorted(by_method.items()):
        ns = sorted(groups)
        means = [np.mean(groups[n]) for n in ns]
        errs = [np.std(groups[n], ddof=1) / np.sqrt(len(groups[n])) if len(groups[n]) > 1 else 0.0 for n in ns]
        ax.errorbar(ns, means, yerr=errs, marker="o", capsize=3, label=method)
    ax.set_xscale("log")
    ax.set_xlabel("target sample size n")
    ax.set_ylabel("negative hold-out likelihood")
    ax.legend()
    fig.tight_layout()
    path = output_dir / "joint_vs_separated.png"
    _save(fig, path)
    return [path]


def render_four_gaussian(output_dir) -> list[Path]:
    """One posterior-probability contour plot per emitted mesh file."""
    output_dir = Path(output_dir)
    paths = []
    for mesh_path in sorted(output_dir.glob("mesh_*.csv")):
        x1, x2, p = [], [], []
        with open(mesh_path, newline="") as fh:
            for row in csv.DictReader(fh):
                x1.append(float(row["x1"]))
                x2.append(float(row["x2"]))
                p.append(float(row["p_plus"]))
        x1, x2, p = np.array(x1), np.array(x2), np.array(p)
        res = int(round(np.sqrt(len(p))))
        fig, ax = plt.subplots(figsize=(5, 4))
        cs = ax.contourf(
            x1.reshape(res, res), x2.reshape(res, res), p.reshape(res, res),
            levels=np.linspace(0, 1, 21), cmap="RdBu_r",
        )
        ax.contour(
            x1.reshape(res, res), x2.reshape(res, res), p.reshape(res, res),
            levels=[0.5], colors="k", linewidths=1.0,
        )
        fig.colorbar(cs, ax=ax, label="P(y=+1 | x)")
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        ax.set_title(mesh_path.stem.removeprefix("mesh_"))
        fig.tight_layout()
        path = mesh_path.with_suffix(".png")
        _save(fig, path)
        paths.append(path)
    return paths


RENDERERS = {
    "kl-convergence": render_kl_convergence,
    "joint-vs-separated": render_joint_vs_separated,
    "four-gaussian": render_four_gaussian,
}


def render_experiment(experiment: str, output_dir) -> list[Path]:
    return RENDERERS[experiment](output_dir)
