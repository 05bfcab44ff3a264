"""CSV bundles for analysis plus rendered figures.

Every writer emits one delimited file with a documented column set and
a PNG of the same stem next to it.  Floats are written with repr so a
re-run with identical inputs reproduces identical bytes; figures are
saved without volatile metadata for the same reason.

Column contracts:
    error table   task, relative_l2
    ci summary    method, count, mean, ci_lo, ci_hi
    curves        method, iteration, relative_l2
    pca           sample_id, pc1, pc2, label
    pca variance  component, explained_fraction
    fields        t, x, reference, predicted
    gap           target, budget, gap
"""

from __future__ import annotations

import csv
import os
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import ErrorReport
from .training import RunTrace

_SAVEFIG = {"dpi": 110, "metadata": {"Software": None}}


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) or isinstance(x, np.floating):
        return repr(float(x))
    return str(x)


def write_rows(path: str, header: Sequence[str], rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(c) for c in row])


def _png_path(csv_path: str) -> str:
    stem, _ = os.path.splitext(csv_path)
    return stem + ".png"


def write_error_table(path: str, errors: Sequence[float],
                      tasks: Optional[Sequence[str]] = None) -> str:
    names = tasks if tasks is not None else [str(i) for i in range(len(errors))]
    if len(names) != len(errors):
        raise ValueError("write_error_table: tasks and errors differ in length")
    write_rows(path, ("task", "relative_l2"),
                zip(names, [float(e) for e in errors]))
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(range(len(errors)), errors, color="#4878a8")
    ax.set_xticks(range(len(errors)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("relative L2")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(_png_path(path), **_SAVEFIG)
    plt.close(fig)
    return path


def write_ci_summary(path: str, reports: Mapping[str, ErrorReport]) -> str:
    rows = [(m, len(r.errors), r.mean,
             r.mean - r.ci_half_width, r.mean + r.ci_half_width)
            for m, r in reports.items()]
    write_rows(path, ("method", "count", "mean", "ci_lo", "ci_hi"), rows)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = range(len(rows))
    means = [r[2] for r in rows]
    ax.errorbar(xs, means,
                yerr=[[r[2] - r[3] for r in rows], [r[4] - r[2] for r in rows]],
                fmt="o", capsize=4, color="#a84848")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([r[0] for r in rows], fontsize=8)
    ax.set_ylabel("mean relative L2")
    fig.tight_layout()
    fig.savefig(_png_path(path), **_SAVEFIG)
    plt.close(fig)
    return path


def write_curves(path: str, traces: Mapping[str, RunTrace]) -> str:
    """One row per logged evaluation point per method."""
    rows = []
    for method, trace in traces.items():
        its = trace.column("iteration")
        rel = trace.column("relative_l2")
        for i, r in zip(its, rel):
            if np.isfinite(r):
                rows.append((method, int(i), float(r)))
    write_rows(path, ("method", "iteration", "relative_l2"), rows)
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for method in traces:
        pts = [(i, r) for m, i, r in rows if m == method]
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=method)
    ax.set_xlabel("iteration")
    ax.set_ylabel("relative L2")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(_png_path(path), **_SAVEFIG)
    plt.close(fig)
    return path


def write_pca(path: str, coords: np.ndarray, labels: Sequence[str],
              explained: Sequence[float]) -> str:
    """Writes the coordinate table and a <stem>-variance.csv companion
    holding the explained-variance fractions."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] < 2:
        raise ValueError("write_pca: coords must be (n, >=2)")
    if len(labels) != coords.shape[0]:
        raise ValueError("write_pca: labels and coords differ in length")
    write_rows(path, ("sample_id", "pc1", "pc2", "label"),
                [(i, float(c[0]), float(c[1]), l)
                 for i, (c, l) in enumerate(zip(coords, labels))])
    stem, _ = os.path.splitext(path)
    write_rows(stem + "-variance.csv", ("component", "explained_fraction"),
                [(k, float(f)) for k, f in enumerate(explained)])
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    for label in dict.fromkeys(labels):
        mask = [l == label for l in labels]
        ax.scatter(coords[mask, 0], coords[mask, 1], s=14, label=label)
    ax.set_xlabel("pc1")
    ax.set_ylabel("pc2")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(_png_path(path), **_SAVEFIG)
    plt.close(fig)
    return path


def write_fields(path: str, slices: Mapping[float, tuple]) -> str:
    """slices maps a time to (x, reference, predicted) arrays."""
    rows = []
    for t, (x, ref, pred) in slices.items():
        x = np.asarray(x).ravel()
        ref = np.asarray(ref).ravel()
        pred = np.asarray(pred).ravel()
        if not len(x) == len(ref) == len(pred):
            raise ValueError("write_fields: slice arrays differ in length")
        for xi, ri, pi in zip(x, ref, pred):
            rows.append((float(t), float(xi), float(ri), float(pi)))
    write_rows(path, ("t", "x", "reference", "predicted"), rows)
    fig, axes = plt.subplots(1, len(slices), figsize=(3.2 * len(slices), 3.0),
                             squeeze=False)
    for ax, (t, (x, ref, pred)) in zip(axes[0], slices.items()):
        ax.plot(x, ref, label="reference", color="#333333")
        ax.plot(x, pred, label="predicted", color="#a84848", ls="--")
        ax.set_title(f"t = {t:g}", fontsize=9)
        ax.set_xlabel("x")
    axes[0][0].set_ylabel("u")
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(_png_path(path), **_SAVEFIG)
    plt.close(fig)
    return path


def write_gap_table(path: str, rows: Sequence[tuple]) -> str:
    """rows of (target label, budget, gap)."""
    write_rows(path, ("target", "budget", "gap"),
                [(t, int(b), float(g)) for t, b, g in rows])
    fig, ax = plt.subplots(figsize=(5, 3.4))
    targets = dict.fromkeys(r[0] for r in rows)
    for t in targets:
        pts = sorted((b, g) for tt, b, g in rows if tt == t)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=str(t))
    ax.set_xlabel("optimization budget")
    ax.set_ylabel("gap")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(_png_path(path), **_SAVEFIG)
    plt.close(fig)
    return path
