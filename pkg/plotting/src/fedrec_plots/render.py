"""Plot jobs over the simulator's CSV outputs.

Input contracts (headers are fixed by the simulator):

  rounds.csv   round,selected,reward,staleness,val_hr,val_ndcg,test_hr,
               test_ndcg,unique_clients,bytes_up,bytes_down,wall_ms,contrib_ms
               ("selected" is a ';'-joined id list)
  bias csv     selector,client_id,count
  summary csv  selector,ablation,lambda,seed,clients_per_round,rounds_run,
               best_round,best_val_hr,test_hr,test_ndcg

Every render writes the image idempotently and returns a small stats dict
(series count, group count, nonzero cells, axis extents) so callers and
tests can verify the figure without parsing pixels.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

PLOT_KINDS = ("convergence", "unique_clients", "heatmap", "sweep")

_PNG_METADATA = {"Software": "fedrec-plots"}


class SchemaError(ValueError):
    """An input CSV is missing a required column."""


@dataclass
class PlotJob:
    kind: str
    inputs: list
    output: str
    labels: list = field(default_factory=list)
    x_axis: str = "round"      # convergence only: round | time
    num_clients: int = 0       # heatmap only: 0 -> infer from ids


def _read_csv(path, required):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        return list(reader)


def _label_for(path, idx, labels):
    if idx < len(labels):
        return labels[idx]
    parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
    return parent or os.path.basename(path)


def _float_or_nan(value):
    return float(value) if value not in ("", None) else float("nan")


def _save(fig, output):
    fig.tight_layout()
    fmt = os.path.splitext(output)[1].lstrip(".").lower() or "png"
    kwargs = {"metadata": _PNG_METADATA} if fmt == "png" else {}
    fig.savefig(output, **kwargs)
    plt.close(fig)


def _render_convergence(job: PlotJob) -> dict:
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    x_max = 0.0
    for idx, path in enumerate(job.inputs):
        rows = _read_csv(path, ["round", "val_hr", "val_ndcg", "wall_ms"])
        rounds = np.array([int(r["round"]) for r in rows])
        if job.x_axis == "time":
            x = np.cumsum([_float_or_nan(r["wall_ms"]) for r in rows]) / 1000.0
            xlabel = "cumulative training time (s)"
        else:
            x = rounds.astype(float)
            xlabel = "round"
        label = _label_for(path, idx, job.labels)
        axes[0].plot(x, [_float_or_nan(r["val_hr"]) for r in rows], label=label)
        axes[1].plot(x, [_float_or_nan(r["val_ndcg"]) for r in rows], label=label)
        x_max = max(x_max, float(x[-1]))
    for ax, name in zip(axes, ("HR@K", "NDCG@K")):
        ax.set_xlabel(xlabel)
        ax.set_ylabel(name)
        ax.legend(fontsize=8)
    _save(fig, job.output)
    return {"kind": "convergence", "series": len(job.inputs), "x_max": x_max}


def _render_unique_clients(job: PlotJob) -> dict:
    names, uniques = [], []
    for idx, path in enumerate(job.inputs):
        rows = _read_csv(path, ["selector", "client_id", "count"])
        selector = rows[0]["selector"] if rows else _label_for(path, idx, job.labels)
        names.append(selector if idx >= len(job.labels) else job.labels[idx])
        uniques.append(sum(1 for r in rows if int(r["count"]) > 0))
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(names), 4))
    ax.bar(range(len(names)), uniques, color="tab:blue")
    ax.set_xticks(range(len(names)), names, rotation=20)
    ax.set_ylabel("unique selected clients")
    _save(fig, job.output)
    return {"kind": "unique_clients", "bars": len(names), "values": uniques}


def _render_heatmap(job: PlotJob) -> dict:
    if len(job.inputs) != 1:
        raise SchemaError("heatmap takes exactly one rounds.csv input")
    rows = _read_csv(job.inputs[0], ["round", "selected"])
    selections = []
    for r in rows:
        ids = [int(c) for c in r["selected"].split(";") if c]
        selections.append((int(r["round"]), ids))
    n_clients = job.num_clients or (max((max(ids) for _, ids in selections if ids),
                                        default=-1) + 1)
    grid = np.zeros((len(selections), n_clients))
    for row_idx, (_, ids) in enumerate(selections):
        grid[row_idx, ids] = 1.0
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.imshow(grid, aspect="auto", interpolation="nearest", cmap="Blues")
    ax.set_xlabel("client id")
    ax.set_ylabel("round")
    _save(fig, job.output)
    return {"kind": "heatmap", "nonzero_cells": int(grid.sum()),
            "rounds": len(selections), "clients": n_clients}


def _render_sweep(job: PlotJob) -> dict:
    by_lambda = {}
    for path in job.inputs:
        for r in _read_csv(path, ["lambda", "test_hr", "test_ndcg"]):
            lam = float(r["lambda"])
            by_lambda.setdefault(lam, []).append(
                (_float_or_nan(r["test_hr"]), _float_or_nan(r["test_ndcg"])))
    lams = sorted(by_lambda)
    hr_means = [float(np.nanmean([v[0] for v in by_lambda[l]])) for l in lams]
    ndcg_means = [float(np.nanmean([v[1] for v in by_lambda[l]])) for l in lams]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    pos = np.arange(len(lams))
    axes[0].bar(pos, hr_means, color="tab:blue")
    axes[0].set_ylabel("test HR@K")
    axes[1].bar(pos, ndcg_means, color="tab:orange")
    axes[1].set_ylabel("test NDCG@K")
    for ax in axes:
        ax.set_xticks(pos, [f"{l:g}" for l in lams])
        ax.set_xlabel("reward trade-off λ")
    _save(fig, job.output)
    return {"kind": "sweep", "groups": len(lams), "lambdas": lams}


_RENDERERS = {
    "convergence": _render_convergence,
    "unique_clients": _render_unique_clients,
    "heatmap": _render_heatmap,
    "sweep": _render_sweep,
}


def render(job: PlotJob) -> dict:
    """Render one job to its output image; returns figure stats."""
    if job.kind not in _RENDERERS:
        raise SchemaError(f"unknown plot kind {job.kind!r} (expected one of {PLOT_KINDS})")
    if not job.inputs:
        raise SchemaError("no input CSVs given")
    for path in job.inputs:
        if not os.path.exists(path):
            raise SchemaError(f"input not found: {path}")
    return _RENDERERS[job.kind](job)
