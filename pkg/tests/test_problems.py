"""GRF, ODE, and Laplace family tests.

The uniformity check for polygon interiors uses an independent
Sutherland-Hodgman clipper as its area oracle; harmonic extensions are
checked against closed-form low-order harmonics and a jet Laplacian.
"""

import numpy as np
import pytest
from scipy import stats

from madpde.graph import Tape
from madpde.problems import (
    BURGERS_U0_SPEC,
    CIRCLE_BOUNDARY_SPEC,
    ConvexPolygon,
    GrfSample,
    GrfSpec,
    disk_harmonic_extension,
    ellipse_instance,
    grf_sample,
    harmonic_jets,
    laplace_instance,
    ode_eta_grid,
    ode_instance,
    ode_reference_jets,
    polygon_sample,
)
from madpde.problems.laplace import _harmonic_xy


# ---------------------------------------------------------------- GRF

def test_grf_spec_validation():
    with pytest.raises(ValueError):
        GrfSpec(scale=-1.0, shift=9.0, exponent=3.0, max_mode=4)
    with pytest.raises(ValueError):
        GrfSpec(scale=1.0, shift=0.0, exponent=3.0, max_mode=4)
    with pytest.raises(ValueError):
        GrfSpec(scale=1.0, shift=9.0, exponent=-2.0, max_mode=4)
    with pytest.raises(ValueError):
        GrfSpec(scale=1.0, shift=9.0, exponent=3.0, max_mode=0)
    with pytest.raises(ValueError):
        GrfSpec(scale=1.0, shift=9.0, exponent=3.0, max_mode=4, domain="sphere")


def test_mode_std_finite_and_decreasing():
    for spec in (BURGERS_U0_SPEC, CIRCLE_BOUNDARY_SPEC):
        stds = spec.mode_std(np.arange(spec.max_mode + 1))
        assert np.all(np.isfinite(stds))
        assert np.all(np.diff(stds) < 0)


def test_zero_coefficients_give_zero_field():
    spec = GrfSpec(scale=1.0, shift=1.0, exponent=2.0, max_mode=8)
    f = GrfSample(spec, np.zeros(17))
    assert np.all(f(np.linspace(0, 1, 50)) == 0.0)


def test_coefficient_layout():
    spec = GrfSpec(scale=1.0, shift=1.0, exponent=2.0, max_mode=1)
    x = np.linspace(0, 1, 7)
    cos_only = GrfSample(spec, np.array([0.0, 1.0, 0.0]))
    sin_only = GrfSample(spec, np.array([0.0, 0.0, 1.0]))
    offset = GrfSample(spec, np.array([2.5, 0.0, 0.0]))
    assert np.allclose(cos_only(x), np.cos(2 * np.pi * x), atol=1e-15)
    assert np.allclose(sin_only(x), np.sin(2 * np.pi * x), atol=1e-15)
    assert np.allclose(offset(x), 2.5, atol=1e-15)


def test_exact_periodicity():
    rng = np.random.default_rng(11)
    for spec in (BURGERS_U0_SPEC, CIRCLE_BOUNDARY_SPEC):
        f = grf_sample(spec, rng)
        ends = f(np.array([0.0, spec.period]))
        assert abs(ends[0] - ends[1]) < 1e-12


def test_burgers_mode_one_std_closed_form():
    expected = 10.0 * ((2 * np.pi) ** 2 + 9.0) ** (-1.5)
    assert abs(BURGERS_U0_SPEC.mode_std(1) - expected) < 1e-15
    expected_circle = 10.0 ** 0.75 * (1.0 + 100.0) ** (-1.5)
    assert abs(CIRCLE_BOUNDARY_SPEC.mode_std(1) - expected_circle) < 1e-15


def test_mode_variance_monte_carlo():
    rng = np.random.default_rng(7)
    draws = np.array([grf_sample(BURGERS_U0_SPEC, rng).coeffs for _ in range(10_000)])
    for k in (1, 2):
        want = 100.0 * ((2 * np.pi * k) ** 2 + 9.0) ** (-3.0)
        got = np.var(draws[:, 2 * k - 1])
        assert abs(got - want) / want < 0.05


# ---------------------------------------------------------------- ODE

def test_ode_eta_grid_is_equidistant():
    grid = ode_eta_grid()
    assert grid.shape == (20,)
    assert grid[0] == 0.0 and grid[-1] == 2.0
    assert np.allclose(np.diff(grid), 2.0 / 19.0)


def test_ode_rejects_nonfinite_eta():
    with pytest.raises(ValueError):
        ode_instance(float("nan"))


def test_ode_reference_values():
    inst = ode_instance(0.0)
    assert abs(inst.reference(np.array([[np.sqrt(np.pi)]]))[0]) < 1e-12
    inst2 = ode_instance(1.0)
    x = np.array([[0.3], [-2.0]])
    assert np.allclose(inst2.reference(x), np.sin((x[:, 0] - 1.0) ** 2))


def test_ode_boundary_sampler_returns_endpoints():
    inst = ode_instance(0.7)
    pts = inst.boundary_sampler(np.random.default_rng(0), 17)
    assert pts.shape == (2, 1)
    assert pts[0, 0] == -np.pi and pts[1, 0] == np.pi


def test_ode_interior_sampler_range_and_descriptor():
    inst = ode_instance(1.3)
    pts = inst.interior_sampler(np.random.default_rng(3), 500)
    assert pts.shape == (500, 1)
    assert np.all(pts > -np.pi) and np.all(pts < np.pi)
    assert inst.descriptor.tolist() == [1.3]


def test_ode_eval_grid():
    inst = ode_instance(0.4)
    points, values = inst.eval_grid()
    assert points.shape == (512, 1) and values.shape == (512,)
    assert np.array_equal(values, inst.reference(points))


def test_ode_reference_jets_zero_residual():
    # Chain-rule identity: the exact solution annihilates the residual.
    for eta in (0.0, 1.0, 1.7):
        inst = ode_instance(eta)
        tape = Tape()
        pts = np.random.default_rng(5).uniform(-np.pi, np.pi, (200, 1))
        jet = ode_reference_jets(eta)(tape, pts)
        res = inst.residual(jet, pts)
        assert np.max(np.abs(res.value)) < 1e-12


def test_ode_reference_boundary_mismatch_zero():
    inst = ode_instance(0.9)
    tape = Tape()
    pts = inst.boundary_sampler(np.random.default_rng(0), 2)
    u = tape.constant(inst.reference(pts)[:, None])
    mismatch = inst.boundary(u, pts)
    assert np.max(np.abs(mismatch.value)) == 0.0


# -------------------------------------------------------------- Laplace

def test_polygon_validation():
    with pytest.raises(ValueError):
        ConvexPolygon(np.array([[1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        ConvexPolygon(np.array([[1.1, 0.0], [0.0, 1.0], [-1.0, 0.0]]))
    ang = np.array([0.0, 2.0, 1.0])  # unsorted breaks convex orientation
    with pytest.raises(ValueError):
        ConvexPolygon(np.column_stack([np.cos(ang), np.sin(ang)]))


def test_polygon_sample_invariants():
    rng = np.random.default_rng(2)
    ks = set()
    for _ in range(2000):
        poly = polygon_sample(rng)  # constructor re-validates everything
        k = poly.vertices.shape[0]
        ks.add(k)
        assert 3 <= k <= 10
    assert ks == set(range(3, 11))


def test_polygon_contains():
    tri = ConvexPolygon(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]))
    inside = tri.contains(np.array([[0.0, 0.2], [0.1, 0.5]]))
    outside = tri.contains(np.array([[0.0, -0.1], [0.9, 0.9], [0.5, 0.5]]))
    assert inside.tolist() == [True, True]
    # (0.5, 0.5) sits exactly on an edge; the strict test excludes it
    assert outside.tolist() == [False, False, False]


def _clip_area(poly: ConvexPolygon, cell_lo, cell_hi) -> float:
    """Sutherland-Hodgman clip of the polygon by a rectangle, then shoelace."""
    pts = [tuple(p) for p in poly.vertices]
    planes = [
        (lambda p, a=cell_lo[0]: p[0] - a, 0),
        (lambda p, a=cell_hi[0]: a - p[0], 0),
        (lambda p, a=cell_lo[1]: p[1] - a, 1),
        (lambda p, a=cell_hi[1]: a - p[1], 1),
    ]
    for dist, axis in planes:
        if not pts:
            return 0.0
        out = []
        for i, cur in enumerate(pts):
            prev = pts[i - 1]
            dc, dp = dist(cur), dist(prev)
            if dp >= 0 and dc >= 0:
                out.append(cur)
            elif dp >= 0 or dc >= 0:
                t = dp / (dp - dc)
                cross = (prev[0] + t * (cur[0] - prev[0]),
                         prev[1] + t * (cur[1] - prev[1]))
                out.append(cross)
                if dc >= 0:
                    out.append(cur)
        pts = out
    if len(pts) < 3:
        return 0.0
    arr = np.asarray(pts)
    nxt = np.roll(arr, -1, axis=0)
    return 0.5 * abs(float(np.sum(arr[:, 0] * nxt[:, 1] - arr[:, 1] * nxt[:, 0])))


def test_polygon_interior_sampling_uniform():
    rng = np.random.default_rng(14)
    poly = polygon_sample(rng)
    inst = laplace_instance(poly, np.array([0.0, 1.0, 0.0]))
    samples = inst.interior_sampler(np.random.default_rng(99), 100_000)
    assert np.all(poly.contains(samples))

    lo, hi = poly.bbox()
    edges_x = np.linspace(lo[0], hi[0], 5)
    edges_y = np.linspace(lo[1], hi[1], 5)
    counts, expected = [], []
    for i in range(4):
        for j in range(4):
            cell_lo = (edges_x[i], edges_y[j])
            cell_hi = (edges_x[i + 1], edges_y[j + 1])
            area = _clip_area(poly, cell_lo, cell_hi)
            n = np.sum((samples[:, 0] >= cell_lo[0]) & (samples[:, 0] < cell_hi[0])
                       & (samples[:, 1] >= cell_lo[1]) & (samples[:, 1] < cell_hi[1]))
            counts.append(float(n))
            expected.append(area)
    counts = np.array(counts)
    expected = np.array(expected) / poly.area() * samples.shape[0]
    keep = expected >= 5.0
    assert np.sum(keep) >= 8
    # Drop the sliver cells and renormalize both sides to a common total.
    counts, expected = counts[keep], expected[keep]
    expected *= counts.sum() / expected.sum()
    p = stats.chisquare(counts, expected).pvalue
    assert p > 0.01


def test_polygon_boundary_sampler_on_edges_and_length_uniform():
    rng = np.random.default_rng(4)
    poly = polygon_sample(rng)
    inst = laplace_instance(poly, np.array([0.0, 1.0, 0.0]))
    pts = inst.boundary_sampler(np.random.default_rng(8), 100_000)

    v = poly.vertices
    w = np.roll(v, -1, axis=0)
    e = w - v
    lengths = poly.edge_lengths()
    # Distance of each point to its nearest edge segment
    rel = pts[:, None, :] - v[None, :, :]
    t = np.clip(np.einsum("nkd,kd->nk", rel, e) / (lengths ** 2), 0.0, 1.0)
    foot = v[None] + t[..., None] * e[None]
    dist = np.min(np.linalg.norm(pts[:, None, :] - foot, axis=2), axis=1)
    assert np.max(dist) < 1e-12

    nearest = np.argmin(np.linalg.norm(pts[:, None, :] - foot, axis=2), axis=1)
    frac = np.bincount(nearest, minlength=len(lengths)) / pts.shape[0]
    assert np.max(np.abs(frac - lengths / lengths.sum())) < 0.01


def test_disk_harmonic_low_order_closed_forms():
    rng = np.random.default_rng(1)
    r = rng.uniform(0, 1, 64)
    phi = rng.uniform(0, 2 * np.pi, 64)
    u1 = disk_harmonic_extension(np.array([0.0, 1.0, 0.0]), r, phi)
    assert np.allclose(u1, r * np.cos(phi), atol=1e-14)
    u2 = disk_harmonic_extension(np.array([0.0, 0.0, 0.0, 1.0, 0.0]), r, phi)
    x, y = r * np.cos(phi), r * np.sin(phi)
    assert np.allclose(u2, x ** 2 - y ** 2, atol=1e-14)


def test_disk_harmonic_rejects_outside_disk():
    with pytest.raises(ValueError):
        disk_harmonic_extension(np.array([1.0, 0.0, 0.0]), np.array([1.5]), np.array([0.0]))


def test_harmonic_jets_values_and_laplacian():
    rng = np.random.default_rng(21)
    coeffs = grf_sample(CIRCLE_BOUNDARY_SPEC, rng).coeffs
    d = np.sqrt(rng.uniform(0, 1, 100))
    psi = rng.uniform(0, 2 * np.pi, 100)
    pts = np.column_stack([d * np.cos(psi), d * np.sin(psi)])

    tape = Tape()
    jet = harmonic_jets(coeffs)(tape, pts)
    vals = jet.val.value.ravel()
    want = _harmonic_xy(coeffs, pts)
    assert np.max(np.abs(vals - want)) < 1e-12

    lap = (jet.d2[0] + jet.d2[1]).value
    assert np.max(np.abs(lap)) < 1e-8

    # First-derivative lanes against central differences of the polar form
    h = 1e-5
    for axis in range(2):
        shift = np.zeros(2)
        shift[axis] = h
        fd = (_harmonic_xy(coeffs, pts + shift) - _harmonic_xy(coeffs, pts - shift)) / (2 * h)
        got = jet.d1[axis].value.ravel()
        denom = np.maximum(np.abs(fd), 1.0)
        assert np.max(np.abs(got - fd) / denom) < 1e-5


def test_laplace_instance_reference_consistency():
    rng = np.random.default_rng(33)
    poly = polygon_sample(rng)
    h = grf_sample(CIRCLE_BOUNDARY_SPEC, rng)
    inst = laplace_instance(poly, h)

    bc = inst.boundary_sampler(np.random.default_rng(5), 200)
    tape = Tape()
    u = tape.constant(inst.reference(bc)[:, None])
    assert np.max(np.abs(inst.boundary(u, bc).value)) == 0.0

    interior = inst.interior_sampler(np.random.default_rng(6), 300)
    jet = harmonic_jets(h)(Tape(), interior)
    res = inst.residual(jet, interior)
    assert np.max(np.abs(res.value)) < 1e-8


def test_laplace_eval_grid_deterministic_and_inside():
    rng = np.random.default_rng(40)
    poly = polygon_sample(rng)
    h = grf_sample(CIRCLE_BOUNDARY_SPEC, rng)
    a = laplace_instance(poly, h)
    b = laplace_instance(poly, h)
    pa, va = a.eval_grid()
    pb, vb = b.eval_grid()
    assert pa.shape == (16 * 1024, 2)
    assert pa.tobytes() == pb.tobytes() and va.tobytes() == vb.tobytes()
    assert np.all(poly.contains(pa))
    assert a.descriptor is None


def test_ellipse_instance_geometry_and_reference():
    rng = np.random.default_rng(55)
    inst = ellipse_instance(rng)
    assert 0.3 <= min(inst.meta["axes"]) and max(inst.meta["axes"]) <= 0.6

    bc = inst.boundary_sampler(np.random.default_rng(1), 5000)
    assert np.max(np.hypot(bc[:, 0], bc[:, 1])) <= 1.0

    interior = inst.interior_sampler(np.random.default_rng(2), 5000)
    assert np.max(np.hypot(interior[:, 0], interior[:, 1])) <= 1.0

    jet = harmonic_jets(np.array(inst.meta["h_coeffs"]))(Tape(), interior[:100])
    res = inst.residual(jet, interior[:100])
    assert np.max(np.abs(res.value)) < 1e-8

    pts, vals = inst.eval_grid()
    assert pts.shape == (16 * 1024, 2)
    assert np.array_equal(vals, inst.reference(pts))
