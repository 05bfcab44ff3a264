"""Problem families: parameter sampling, physics operators, references.

Each family module builds :class:`~madpde.problems.base.ProblemInstance`
objects whose residual/boundary closures consume decoder jets, plus an
independent reference solution used only for evaluation and testing.
"""

from madpde.problems.base import ProblemInstance
from madpde.problems.grf import (
    BURGERS_U0_SPEC,
    BURGERS_U0_EXTRAPOLATION_SPEC,
    CIRCLE_BOUNDARY_SPEC,
    GrfSample,
    GrfSpec,
    grf_sample,
)
from madpde.problems.ode import ode_eta_grid, ode_instance, ode_reference_jets
from madpde.problems.burgers import (
    BurgersBlowupError,
    BurgersField,
    burgers_instance,
    burgers_reference,
)
from madpde.problems.laplace import (
    ConvexPolygon,
    disk_harmonic_extension,
    ellipse_geometry_instance,
    ellipse_instance,
    harmonic_jets,
    laplace_instance,
    polygon_sample,
)

import numpy as _np


def instance_from_meta(meta: dict) -> ProblemInstance:
    """Rebuild a task from its stored metadata record.

    Every family constructor writes a meta dict with enough data to
    recreate the instance exactly; this is the inverse used when runs
    are resumed from checkpoints.
    """
    family = meta.get("family")
    if family == "ode":
        return ode_instance(meta["eta"])
    if family == "burgers":
        u0 = meta.get("u0")
        if u0 is None:
            raise ValueError("burgers metadata lacks its initial-condition record")
        sample = GrfSample(GrfSpec(**u0["spec"]),
                           _np.asarray(u0["coeffs"], dtype=_np.float64))
        return burgers_instance(sample, meta["nu"],
                                heterogeneous=meta.get("heterogeneous", False))
    if family == "laplace":
        poly = ConvexPolygon(_np.asarray(meta["vertices"], dtype=_np.float64))
        return laplace_instance(poly, _np.asarray(meta["h_coeffs"],
                                                  dtype=_np.float64))
    if family == "ellipse":
        return ellipse_geometry_instance(meta["center"], meta["axes"],
                                         meta["tilt"],
                                         _np.asarray(meta["h_coeffs"],
                                                     dtype=_np.float64))
    raise ValueError(f"instance_from_meta: unknown family {family!r}")

__all__ = [
    "ProblemInstance",
    "GrfSpec",
    "GrfSample",
    "grf_sample",
    "BURGERS_U0_SPEC",
    "BURGERS_U0_EXTRAPOLATION_SPEC",
    "CIRCLE_BOUNDARY_SPEC",
    "ode_eta_grid",
    "ode_instance",
    "ode_reference_jets",
    "BurgersField",
    "BurgersBlowupError",
    "burgers_instance",
    "burgers_reference",
    "ConvexPolygon",
    "polygon_sample",
    "disk_harmonic_extension",
    "harmonic_jets",
    "laplace_instance",
    "ellipse_instance",
    "ellipse_geometry_instance",
    "instance_from_meta",
]
