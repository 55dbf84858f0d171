import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurotopo.clough_tocher import (
    CloughTocherRaster,
    bezier_control_points,
    clough_tocher_interpolate,
    estimate_gradients,
    evaluate,
    grid_axes,
    locate,
)
from neurotopo.errors import ValidationError
from neurotopo.geometry import delaunay_triangulate, fibonacci_layout, project_azimuthal_equidistant


@pytest.fixture(scope="module")
def scalp_tri():
    return delaunay_triangulate(project_azimuthal_equidistant(fibonacci_layout(125)).points)


def pixel_xy(tri, w, h=None):
    xs, ys = grid_axes(tri, w, w if h is None else h)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return gx, gy


def test_constant_reproduced(scalp_tri):
    plane, mask = clough_tocher_interpolate(scalp_tri, np.full(125, 3.7), 32)
    assert np.all(np.abs(plane[mask] - 3.7) <= 1e-9)
    assert np.all(plane[~mask] == 0)


def test_linear_reproduced(scalp_tri):
    p = scalp_tri.points
    plane, mask = clough_tocher_interpolate(scalp_tri, 2 * p[:, 0] + 3 * p[:, 1] + 1, 32)
    gx, gy = pixel_xy(scalp_tri, 32)
    assert np.max(np.abs(plane - (2 * gx + 3 * gy + 1))[mask]) <= 1e-6


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), c=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_linear_reproduced_on_random_clouds(a, b, c, seed):
    p = np.random.default_rng(seed).uniform(-1, 1, (40, 2))
    tri = delaunay_triangulate(p)
    plane, mask = clough_tocher_interpolate(tri, a * p[:, 0] + b * p[:, 1] + c, 20)
    gx, gy = pixel_xy(tri, 20)
    assert np.max(np.abs(plane - (a * gx + b * gy + c))[mask], initial=0) <= 1e-6 * (1 + abs(a) + abs(b) + abs(c))


def test_pixel_on_vertex_takes_vertex_value():
    # bounding-box corners coincide with vertices 0 and 3 on a 3 x 3 grid
    p = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [0.4, 0.6]])
    tri = delaunay_triangulate(p)
    vals = np.array([1.5, -2.0, 0.25, 7.0, 3.0])
    plane, mask = clough_tocher_interpolate(tri, vals, 3)
    assert plane[0, 0] == pytest.approx(1.5, abs=1e-12)
    assert plane[2, 0] == pytest.approx(-2.0, abs=1e-12)
    assert plane[0, 2] == pytest.approx(0.25, abs=1e-12)
    assert plane[2, 2] == pytest.approx(7.0, abs=1e-12)


def test_value_count_mismatch_rejected(scalp_tri):
    with pytest.raises(ValidationError, match="125 vertex values"):
        clough_tocher_interpolate(scalp_tri, np.zeros(124), 16)


def test_nonfinite_rejected(scalp_tri):
    v = np.zeros(125)
    v[3] = np.nan
    with pytest.raises(ValidationError, match="finite"):
        clough_tocher_interpolate(scalp_tri, v, 16)


def test_mask_depends_only_on_geometry(scalp_tri):
    rng = np.random.default_rng(0)
    r = CloughTocherRaster(scalp_tri, 24)
    masks = [r(rng.normal(size=125))[1] for _ in range(3)]
    assert all(np.array_equal(masks[0], m) for m in masks)
    assert 0 < masks[0].sum() < 24 * 24


def test_quadratic_reproduced_with_exact_gradients():
    rng = np.random.default_rng(1)
    p = rng.uniform(-1, 1, (60, 2))
    tri = delaunay_triangulate(p)
    x, y = p[:, 0], p[:, 1]
    f = 1 + 2 * x - 3 * y + 0.7 * x * x - 1.1 * x * y + 0.4 * y * y
    g = np.stack([2 + 1.4 * x - 1.1 * y, -3 - 1.1 * x + 0.8 * y], axis=1)
    c = bezier_control_points(tri, f, g)
    q = rng.uniform(-1, 1, (3000, 2))
    idx, bary = locate(tri, q)
    ok = idx >= 0
    qx, qy = q[ok, 0], q[ok, 1]
    expect = 1 + 2 * qx - 3 * qy + 0.7 * qx * qx - 1.1 * qx * qy + 0.4 * qy * qy
    assert np.max(np.abs(evaluate(c, idx[ok], bary[ok]) - expect)) < 1e-12


def test_least_squares_gradient_exact_for_planes(scalp_tri):
    p = scalp_tri.points
    g = estimate_gradients(scalp_tri, -1.5 * p[:, 0] + 0.5 * p[:, 1])
    np.testing.assert_allclose(g, np.tile([-1.5, 0.5], (125, 1)), atol=1e-10)


# C1 continuity --------------------------------------------------------------
#
# Each sub-patch is a cubic polynomial in (x, y). The oracle recovers that
# polynomial exactly from 10 samples inside the sub-triangle and
# differentiates it symbolically, so no finite-difference error enters.

MONOMIALS = [(i, j) for i in range(4) for j in range(4 - i)]


def patch_gradient(c, tri, t, sub, at):
    P = tri.points[tri.triangles[t]]
    cen = P.mean(axis=0)
    corners = {0: (P[1], P[2]), 1: (P[2], P[0]), 2: (P[0], P[1])}[sub]
    a, b = corners
    rng = np.random.default_rng(7)
    w = rng.dirichlet([1, 1, 1], 10) * 0.9 + 0.1 / 3
    pts = w[:, :1] * a + w[:, 1:2] * b + w[:, 2:] * cen
    scale = np.linalg.norm(b - a)
    origin = pts.mean(axis=0)
    u = (pts - origin) / scale
    idx, bary = locate(tri, pts)
    vals = evaluate(c, np.full(10, t), _bary_in(tri, t, pts))
    V = np.stack([u[:, 0] ** i * u[:, 1] ** j for i, j in MONOMIALS], axis=1)
    coef = np.linalg.solve(V, vals)
    z = (np.asarray(at) - origin) / scale
    gx = sum(cf * i * z[:, 0] ** max(i - 1, 0) * z[:, 1] ** j for cf, (i, j) in zip(coef, MONOMIALS) if i)
    gy = sum(cf * j * z[:, 0] ** i * z[:, 1] ** max(j - 1, 0) for cf, (i, j) in zip(coef, MONOMIALS) if j)
    return np.stack([gx, gy], axis=1) / scale


def _bary_in(tri, t, pts):
    P = tri.points[tri.triangles[t]]
    T = np.array([P[1] - P[0], P[2] - P[0]]).T
    l = np.linalg.solve(T, (pts - P[0]).T).T
    return np.column_stack([1 - l.sum(axis=1), l])


def test_c1_across_outer_and_internal_edges():
    rng = np.random.default_rng(11)
    p = rng.uniform(-1, 1, (30, 2))
    tri = delaunay_triangulate(p)
    vals = np.sin(2 * p[:, 0]) + np.cos(3 * p[:, 1]) + 0.3 * rng.normal(size=30)
    c = bezier_control_points(tri, vals, estimate_gradients(tri, vals))
    ts = np.linspace(0.05, 0.95, 10)
    worst = 0.0
    for t, tri_v in enumerate(tri.triangles):
        P = tri.points[tri_v]
        cen = P.mean(axis=0)
        # internal edges: vertex k to centroid, shared by the two sub-patches touching vertex k
        for k in range(3):
            at = P[k] + ts[:, None] * (cen - P[k])
            left, right = [s for s in range(3) if s != k]
            worst = max(worst, np.abs(patch_gradient(c, tri, t, left, at) - patch_gradient(c, tri, t, right, at)).max())
        # outer edges shared with a neighbouring triangle
        for k in range(3):
            s = tri.neighbors[t, k]
            if s < t:
                continue
            a, b = P[(k + 1) % 3], P[(k + 2) % 3]
            at = a + ts[:, None] * (b - a)
            k_other = int(np.flatnonzero(tri.neighbors[s] == t)[0])
            worst = max(worst, np.abs(patch_gradient(c, tri, t, k, at) - patch_gradient(c, tri, s, k_other, at)).max())
    assert worst < 1e-6
