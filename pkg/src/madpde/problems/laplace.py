"""Laplace family on random convex domains inside the unit disk.

Boundary data comes from a random Fourier series h on the unit circle;
its harmonic extension u(r, phi) = a0 + sum r^k (a_k cos k phi + b_k
sin k phi) is harmonic on the whole disk, so restricting it to any
domain contained in the disk yields an exact reference solution with
matching boundary values.  Domains are convex polygons with vertices on
the unit circle, or (for extrapolation) ellipses strictly inside it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from madpde.graph import Jet2, jet_arith, lift_constant, lift_coordinate
from madpde.problems.base import ProblemInstance, stable_seed
from madpde.problems.grf import CIRCLE_BOUNDARY_SPEC, grf_sample

EVAL_POINTS = 16 * 1024
MIN_VERTICES = 3
MAX_VERTICES = 10
_MIN_ANGLE_GAP = 1e-3


@dataclass(frozen=True)
class ConvexPolygon:
    """Vertices on the unit circle, counterclockwise by angle."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("ConvexPolygon: vertices must be (k, 2)")
        k = v.shape[0]
        if not MIN_VERTICES <= k <= MAX_VERTICES:
            raise ValueError(f"ConvexPolygon: vertex count {k} outside [{MIN_VERTICES}, {MAX_VERTICES}]")
        radii = np.hypot(v[:, 0], v[:, 1])
        if np.max(np.abs(radii - 1.0)) > 1e-12:
            raise ValueError("ConvexPolygon: vertices must lie on the unit circle")
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(cross <= 0):
            raise ValueError("ConvexPolygon: vertices must be strictly convex counterclockwise")
        object.__setattr__(self, "vertices", v)

    def contains(self, points) -> np.ndarray:
        """Strict half-plane test for each point."""
        p = np.asarray(points, dtype=np.float64)
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        # cross(e_i, p - v_i) for every edge i and point: (k, N)
        rel_x = p[:, 0][None, :] - v[:, 0][:, None]
        rel_y = p[:, 1][None, :] - v[:, 1][:, None]
        cross = e[:, 0][:, None] * rel_y - e[:, 1][:, None] * rel_x
        return np.all(cross > 0, axis=0)

    def bbox(self):
        v = self.vertices
        return v.min(axis=0), v.max(axis=0)

    def area(self) -> float:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        return 0.5 * float(np.sum(v[:, 0] * w[:, 1] - v[:, 1] * w[:, 0]))

    def edge_lengths(self) -> np.ndarray:
        e = np.roll(self.vertices, -1, axis=0) - self.vertices
        return np.hypot(e[:, 0], e[:, 1])


def polygon_sample(rng: np.random.Generator) -> ConvexPolygon:
    """Random vertex count in [3, 10], angles uniform; near-duplicate
    angle sets (gap below 1e-3 rad, wraparound included) are redrawn."""
    while True:
        k = int(rng.integers(MIN_VERTICES, MAX_VERTICES + 1))
        ang = np.sort(rng.uniform(0.0, 2.0 * np.pi, k))
        gaps = np.diff(ang, append=ang[0] + 2.0 * np.pi)
        if np.min(gaps) >= _MIN_ANGLE_GAP:
            break
    return ConvexPolygon(np.column_stack([np.cos(ang), np.sin(ang)]))


def _coeff_array(h_coeffs) -> np.ndarray:
    c = getattr(h_coeffs, "coeffs", h_coeffs)
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 1 or c.shape[0] < 1 or c.shape[0] % 2 != 1:
        raise ValueError("harmonic coefficients must be [a0, a1, b1, ...]")
    return c


def disk_harmonic_extension(h_coeffs, r, phi) -> np.ndarray:
    """Harmonic extension of the circle data into the closed unit disk."""
    c = _coeff_array(h_coeffs)
    r = np.asarray(r, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if np.any(r > 1.0 + 1e-12):
        raise ValueError("disk_harmonic_extension: r must not exceed 1")
    kmax = c.shape[0] // 2
    k = np.arange(1, kmax + 1)
    rk = r[..., None] ** k
    ang = phi[..., None] * k
    return c[0] + (rk * np.cos(ang)) @ c[1::2] + (rk * np.sin(ang)) @ c[2::2]


def _harmonic_xy(c: np.ndarray, points: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    return disk_harmonic_extension(c, np.hypot(p[:, 0], p[:, 1]),
                                   np.arctan2(p[:, 1], p[:, 0]))


def harmonic_jets(h_coeffs):
    """Jet closure for the harmonic extension.

    Uses the Cartesian recurrence P_{k+1} = x P_k - y Q_k,
    Q_{k+1} = x Q_k + y P_k for r^k cos(k phi) and r^k sin(k phi), so
    the same expression works for values and derivative lanes alike.
    """
    c = _coeff_array(h_coeffs)
    kmax = c.shape[0] // 2

    def closure(tape, points: np.ndarray) -> Jet2:
        pts = np.asarray(points, dtype=np.float64)
        xj = lift_coordinate(tape, pts[:, :1], 0, 2)
        yj = lift_coordinate(tape, pts[:, 1:2], 1, 2)
        acc = lift_constant(tape, float(c[0]), 2)
        pk = lift_constant(tape, 1.0, 2)
        qk = lift_constant(tape, 0.0, 2)
        for k in range(1, kmax + 1):
            xp = jet_arith(xj, pk, "mul")
            yq = jet_arith(yj, qk, "mul")
            xq = jet_arith(xj, qk, "mul")
            yp = jet_arith(yj, pk, "mul")
            pk = jet_arith(xp, jet_arith(yq, None, "neg"), "add")
            qk = jet_arith(xq, yp, "add")
            term = jet_arith(pk, lift_constant(tape, float(c[2 * k - 1]), 2), "mul")
            acc = jet_arith(acc, term, "add")
            term = jet_arith(qk, lift_constant(tape, float(c[2 * k]), 2), "mul")
            acc = jet_arith(acc, term, "add")
        return acc

    return closure


def _harmonic_instance(family, c, interior_sampler, boundary_sampler, meta,
                       seed_arrays, descriptor=None) -> ProblemInstance:
    def residual(jet, x: np.ndarray):
        return jet.d2[0] + jet.d2[1]

    def boundary(u, x: np.ndarray):
        target = _harmonic_xy(c, x)[:, None]
        return u + (-u.tape.constant(target))

    def reference(points: np.ndarray) -> np.ndarray:
        return _harmonic_xy(c, points)

    def eval_grid_builder():
        rng = np.random.default_rng(stable_seed(*seed_arrays))
        points = interior_sampler(rng, EVAL_POINTS)
        return points, reference(points)

    return ProblemInstance(
        family=family,
        spatial_dim=2,
        residual=residual,
        boundary=boundary,
        interior_sampler=interior_sampler,
        boundary_sampler=boundary_sampler,
        reference=reference,
        d1_mask=(False, False),
        d2_mask=(True, True),
        descriptor=descriptor,
        embedding=None,
        meta=meta,
        eval_grid_builder=eval_grid_builder,
    )


def laplace_instance(poly: ConvexPolygon, h_coeffs) -> ProblemInstance:
    """Dirichlet problem on a polygon; no descriptor (domains differ)."""
    c = _coeff_array(h_coeffs)
    lo, hi = poly.bbox()
    lengths = poly.edge_lengths()
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    v = poly.vertices
    v_next = np.roll(v, -1, axis=0)

    def interior_sampler(rng: np.random.Generator, m: int) -> np.ndarray:
        # Rejection from the bounding box; convex area keeps the
        # acceptance rate workable for any non-degenerate polygon.
        got = []
        have = 0
        for _ in range(1000):
            cand = rng.uniform(lo, hi, size=(max(2 * m, 128), 2))
            cand = cand[poly.contains(cand)]
            got.append(cand)
            have += cand.shape[0]
            if have >= m:
                return np.concatenate(got)[:m]
        raise RuntimeError("laplace interior sampler: acceptance rate too low")

    def boundary_sampler(rng: np.random.Generator, m: int) -> np.ndarray:
        s = rng.uniform(0.0, cum[-1], m)
        e = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(lengths) - 1)
        frac = ((s - cum[e]) / lengths[e])[:, None]
        return v[e] + frac * (v_next[e] - v[e])

    meta = {
        "family": "laplace",
        "vertices": poly.vertices.tolist(),
        "h_coeffs": c.tolist(),
    }
    return _harmonic_instance("laplace", c, interior_sampler, boundary_sampler,
                              meta, (poly.vertices, c))


def ellipse_instance(rng: np.random.Generator, h_coeffs=None) -> ProblemInstance:
    """Extrapolation domain: random ellipse strictly inside the disk.

    Center uniform in the disk of radius 0.3, semi-axes uniform in
    [0.3, 0.6], rotation uniform; those bounds keep every point at
    radius <= 0.9, so containment never needs a redraw.  Boundary data
    defaults to a fresh draw from the circle field.
    """
    theta_c = rng.uniform(0.0, 2.0 * np.pi)
    r_c = 0.3 * np.sqrt(rng.uniform())
    center = r_c * np.array([np.cos(theta_c), np.sin(theta_c)])
    axes = rng.uniform(0.3, 0.6, 2)
    tilt = rng.uniform(0.0, np.pi)
    if h_coeffs is None:
        h_coeffs = grf_sample(CIRCLE_BOUNDARY_SPEC, rng)
    return ellipse_geometry_instance(center, axes, tilt, h_coeffs)


def ellipse_geometry_instance(center, axes, tilt: float, h_coeffs) -> ProblemInstance:
    """Ellipse task from explicit geometry, used to rebuild stored runs."""
    center = np.asarray(center, dtype=np.float64)
    axes = np.asarray(axes, dtype=np.float64)
    tilt = float(tilt)
    c = _coeff_array(h_coeffs)
    if np.hypot(*center) + np.max(axes) > 1.0:
        raise ValueError("ellipse_geometry_instance: ellipse leaves the unit disk")

    rot = np.array([[np.cos(tilt), -np.sin(tilt)], [np.sin(tilt), np.cos(tilt)]])

    def to_world(unit_xy: np.ndarray) -> np.ndarray:
        return center + (unit_xy * axes) @ rot.T

    def interior_sampler(rng_: np.random.Generator, m: int) -> np.ndarray:
        # Uniform on the unit disk, pushed through the affine map;
        # constant Jacobian keeps it uniform on the ellipse.
        d = np.sqrt(rng_.uniform(size=m))
        psi = rng_.uniform(0.0, 2.0 * np.pi, m)
        return to_world(np.column_stack([d * np.cos(psi), d * np.sin(psi)]))

    # Arc-length table for boundary sampling; 4096 panels put the
    # inversion error far below any sampling-resolution concern.
    psi_grid = np.linspace(0.0, 2.0 * np.pi, 4097)
    speed = np.hypot(axes[0] * np.sin(psi_grid), axes[1] * np.cos(psi_grid))
    arc = np.concatenate([[0.0], np.cumsum((speed[1:] + speed[:-1]) / 2.0
                                           * np.diff(psi_grid))])

    def boundary_sampler(rng_: np.random.Generator, m: int) -> np.ndarray:
        s = rng_.uniform(0.0, arc[-1], m)
        psi = np.interp(s, arc, psi_grid)
        return to_world(np.column_stack([np.cos(psi), np.sin(psi)]))

    meta = {
        "family": "ellipse",
        "center": center.tolist(),
        "axes": axes.tolist(),
        "tilt": float(tilt),
        "h_coeffs": c.tolist(),
    }
    return _harmonic_instance("ellipse", c, interior_sampler, boundary_sampler,
                              meta, (center, axes, np.array([tilt]), c))
