"""Shifted-oscillation ODE family.

du/dx = 2(x - eta) cos((x - eta)^2) on (-pi, pi) with both endpoint
values prescribed, solved exactly by u(x) = sin((x - eta)^2).  The one
scalar parameter doubles as the descriptor, which makes this the
smallest family that exercises the whole pre-train/fine-tune path.
"""

from __future__ import annotations

import numpy as np

from madpde.graph import Jet2, jet_arith, lift_constant, lift_coordinate
from madpde.problems.base import ProblemInstance

DOMAIN = (-np.pi, np.pi)
EVAL_POINTS = 512


def ode_eta_grid(count: int = 20, lo: float = 0.0, hi: float = 2.0) -> np.ndarray:
    """Equidistant parameter grid; one entry is typically held out."""
    return np.linspace(lo, hi, count)


def _reference(x, eta):
    return np.sin((x - eta) ** 2)


def _forcing(x, eta):
    return 2.0 * (x - eta) * np.cos((x - eta) ** 2)


def ode_instance(eta: float) -> ProblemInstance:
    if not np.isfinite(eta):
        raise ValueError("ode_instance: eta must be finite")
    eta = float(eta)
    lo, hi = DOMAIN

    def residual(jet: Jet2, x: np.ndarray):
        tape = jet.val.tape
        forcing = tape.constant(_forcing(x[:, :1], eta))
        return jet.d1[0] + (-forcing)

    def boundary(u, x: np.ndarray):
        tape = u.tape
        return u + (-tape.constant(_reference(x[:, :1], eta)))

    def interior_sampler(rng: np.random.Generator, m: int) -> np.ndarray:
        return rng.uniform(lo, hi, size=(m, 1))

    def boundary_sampler(rng: np.random.Generator, m: int) -> np.ndarray:
        # Both endpoint conditions, always; m is ignored by design.
        return np.array([[lo], [hi]])

    def reference(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return _reference(points[:, 0], eta)

    def eval_grid_builder():
        points = np.linspace(lo, hi, EVAL_POINTS)[:, None]
        return points, _reference(points[:, 0], eta)

    return ProblemInstance(
        family="ode",
        spatial_dim=1,
        residual=residual,
        boundary=boundary,
        interior_sampler=interior_sampler,
        boundary_sampler=boundary_sampler,
        reference=reference,
        d1_mask=(True,),
        d2_mask=(False,),
        descriptor=np.array([eta]),
        embedding=None,
        meta={"family": "ode", "eta": eta},
        eval_grid_builder=eval_grid_builder,
    )


def ode_reference_jets(eta: float):
    """Exact solution as a jet closure, for loss-consistency checks."""
    eta = float(eta)

    def closure(tape, x: np.ndarray) -> Jet2:
        x = np.asarray(x, dtype=np.float64)
        xj = lift_coordinate(tape, x[:, :1], 0, 1)
        shift = jet_arith(xj, lift_constant(tape, -eta, 1), "add")
        square = jet_arith(shift, shift, "mul")
        return jet_arith(square, None, "sin")

    return closure
