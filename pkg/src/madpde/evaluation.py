"""Error metrics, intervals, PCA projection, and the manifold gap.

Everything here is a pure function of arrays plus the decoder forward
pass; nothing touches tapes except the gap estimator, which runs a
small supervised Adam loop over the latent input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from madpde.graph import Tape, backward
from madpde.network import NetworkWeights, forward, forward_values, register_weights


class EvalError(ValueError):
    pass


def relative_l2(pred, ref) -> float:
    """||pred - ref|| / ||ref|| over a shared evaluation point set."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if pred.shape != ref.shape:
        raise EvalError("relative_l2: length mismatch")
    denom = np.linalg.norm(ref)
    if denom == 0.0:
        raise EvalError("relative_l2: reference has zero norm")
    return float(np.linalg.norm(pred - ref) / denom)


def mean_and_ci(errors, confidence: float = 0.95):
    """Sample mean and Student-t half-width with N-1 dof."""
    errors = np.asarray(errors, dtype=np.float64).ravel()
    n = errors.shape[0]
    if n < 2:
        raise EvalError("mean_and_ci: need at least two values")
    mean = float(np.mean(errors))
    sem = float(np.std(errors, ddof=1) / np.sqrt(n))
    half = float(stats.t.ppf(0.5 + confidence / 2.0, n - 1) * sem)
    return mean, half


@dataclass
class ErrorReport:
    """Per-task errors with their t-interval summary."""

    task_ids: list
    errors: np.ndarray
    mean: float
    ci_half_width: float

    @classmethod
    def from_errors(cls, errors, task_ids=None) -> "ErrorReport":
        errors = np.asarray(errors, dtype=np.float64).ravel()
        if np.any(errors < 0):
            raise EvalError("ErrorReport: errors must be nonnegative")
        if task_ids is None:
            task_ids = list(range(errors.shape[0]))
        mean, half = mean_and_ci(errors)
        return cls(list(task_ids), errors, mean, half)


def iterations_to_threshold(trace, tau: float):
    """First recorded iteration with relative L2 <= tau, else None.

    Accepts a RunTrace or a plain (iterations, errors) pair; unrecorded
    entries (NaN) are skipped.
    """
    if tau <= 0:
        raise EvalError("iterations_to_threshold: tau must be positive")
    if hasattr(trace, "column"):
        its = trace.column("iteration")
        errs = trace.column("relative_l2")
    else:
        its, errs = trace
        its = np.asarray(its, dtype=np.float64)
        errs = np.asarray(errs, dtype=np.float64)
    ok = np.isfinite(errs) & (errs <= tau)
    if not np.any(ok):
        return None
    return int(its[np.argmax(ok)])


@dataclass
class ManifoldProjection:
    coords: np.ndarray
    explained: np.ndarray
    eigenvalues: np.ndarray
    labels: list
    rank_deficient: bool


def pca_project(samples, labels=None) -> ManifoldProjection:
    """Top-2 principal components of mean-centered function samples.

    Deterministic by construction: symmetric eigensolve plus the sign
    convention that each eigenvector's first nonzero entry is positive.
    Rank-deficient inputs keep zero coordinates in the missing
    directions and are flagged.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise EvalError("pca_project: need >= 3 samples on a shared grid")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]

    tol = eigvals[0] * 1e-12 if eigvals.size and eigvals[0] > 0 else 0.0
    rank = int(np.sum(eigvals > tol))
    coords = np.zeros((x.shape[0], 2))
    for comp in range(min(2, rank)):
        v = eigvecs[:, comp]
        nz = np.nonzero(v)[0]
        if nz.size and v[nz[0]] < 0:
            v = -v
        coords[:, comp] = centered @ v
    total = float(np.sum(eigvals))
    explained = eigvals[:2] / total if total > 0 else np.zeros(2)
    if labels is None:
        labels = list(range(x.shape[0]))
    return ManifoldProjection(coords=coords, explained=np.asarray(explained),
                              eigenvalues=eigvals, labels=list(labels),
                              rank_deficient=rank < 2)


def _decode(weights: NetworkWeights, grid: np.ndarray, z) -> np.ndarray:
    return forward(weights, grid, z).ravel()


def empirical_manifold_gap(weights: NetworkWeights, latent_dim: int,
                           reference_fields, grid, *, iterations: int = 500,
                           lr: float = 0.02) -> np.ndarray:
    """Distance of each reference field to the decoder's latent manifold.

    Minimizes the mean-square mismatch over z with Adam at a constant
    learning rate, projecting z back onto the unit ball after every
    step, and reports the best relative L2 seen.  The constant rate
    makes a longer budget a strict continuation of a shorter one, so
    gaps cannot increase with budget.
    """
    from madpde.training import AdamState, adam_step

    if latent_dim != weights.config.latent_dim:
        raise EvalError("empirical_manifold_gap: latent_dim disagrees with weights")
    grid = np.asarray(grid, dtype=np.float64)
    fields = [np.asarray(f, dtype=np.float64).ravel() for f in reference_fields]
    gaps = np.empty(len(fields))

    for fi, target in enumerate(fields):
        if target.shape[0] != grid.shape[0]:
            raise EvalError("empirical_manifold_gap: field/grid length mismatch")
        if latent_dim == 0:
            gaps[fi] = relative_l2(_decode(weights, grid, None), target)
            continue
        z = np.zeros(latent_dim)
        best = relative_l2(_decode(weights, grid, z), target)
        state = AdamState.for_params([z])
        target_col = target[:, None]
        for _ in range(iterations):
            tape = Tape()
            wn = register_weights(tape, weights, trainable=False)
            z_node = tape.param(z)
            pred = forward_values(tape, wn, grid, z_node)
            diff = pred + (-tape.constant(target_col))
            loss = tape.mul(tape.constant(1.0 / target.shape[0]),
                            tape.sum(tape.mul(diff, diff)))
            grads = backward(loss)
            (z,), state = adam_step(state, [z], [grads.wrt(z_node)], lr)
            norm = float(np.linalg.norm(z))
            if norm > 1.0:
                z = z / norm
            best = min(best, relative_l2(_decode(weights, grid, z), target))
        gaps[fi] = best
    return gaps
