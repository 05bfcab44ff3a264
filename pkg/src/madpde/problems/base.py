"""Shared problem-instance container.

A ProblemInstance bundles everything a trainer needs to know about one
task: how to sample collocation points, how to turn decoder jets into
residual and boundary-mismatch values, which derivative lanes the
residual actually reads, and an independent reference solution for
error reporting.  Instances are immutable after construction apart from
the lazily built evaluation grid; samplers take an explicit RNG so
callers control the streams.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class ProblemInstance:
    """One task: operators, samplers, descriptor, reference.

    residual maps (Jet2 of the candidate solution, batch points) to a
    per-point residual node of shape (N, 1); boundary maps (solution
    value node, boundary points) to the per-point mismatch, also (N, 1).
    d1_mask/d2_mask name the derivative lanes the residual reads, so the
    forward pass can skip the rest.
    """

    family: str
    spatial_dim: int
    residual: Callable
    boundary: Callable
    interior_sampler: Callable
    boundary_sampler: Callable
    reference: Callable
    d1_mask: tuple
    d2_mask: tuple
    descriptor: Optional[np.ndarray] = None
    embedding: Optional[tuple] = None
    meta: dict = field(default_factory=dict)
    eval_grid_builder: Optional[Callable] = None
    _eval_cache: Optional[tuple] = field(default=None, repr=False)

    def eval_grid(self):
        """(points, reference values) used for relative-L2 reporting.

        Built once and cached; Burgers pays its reference solve here.
        """
        if self._eval_cache is None:
            if self.eval_grid_builder is None:
                raise ValueError(f"{self.family}: no evaluation grid defined")
            points, values = self.eval_grid_builder()
            points = np.asarray(points, dtype=np.float64)
            values = np.asarray(values, dtype=np.float64).ravel()
            if points.shape[0] != values.shape[0]:
                raise ValueError("evaluation grid points/values length mismatch")
            self._eval_cache = (points, values)
        return self._eval_cache


def stable_seed(*arrays) -> int:
    """Content-addressed RNG seed from defining arrays.

    Families whose evaluation grid is random (Laplace) derive it from
    the instance's own data so reruns see identical grids without any
    global seed plumbing.
    """
    h = hashlib.blake2b(digest_size=8)
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=np.float64)).tobytes())
    return int.from_bytes(h.digest(), "little")
