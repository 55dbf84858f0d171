import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurotopo.errors import ValidationError
from neurotopo.geometry import (
    ElectrodeLayout,
    delaunay_triangulate,
    fibonacci_layout,
    project_azimuthal_equidistant,
)


def layout_from(points):
    p = np.asarray(points, dtype=float)
    p = p / np.linalg.norm(p, axis=1, keepdims=True)
    return ElectrodeLayout(p, tuple(f"e{i}" for i in range(len(p))))


def random_cap(rng, n, z_min=-0.9):
    z = rng.uniform(z_min, 1.0, n)
    phi = rng.uniform(0, 2 * np.pi, n)
    r = np.sqrt(1 - z**2)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


# projection -----------------------------------------------------------------


def test_apex_maps_to_origin_and_equator_to_half_pi():
    proj = project_azimuthal_equidistant(layout_from([[0, 0, 1], [1, 0, 0], [0, 1, 0]]))
    np.testing.assert_allclose(proj.points[0], [0, 0], atol=1e-15)
    np.testing.assert_allclose(proj.points[1], [np.pi / 2, 0], atol=1e-15)
    np.testing.assert_allclose(proj.points[2], [0, np.pi / 2], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(d=st.floats(0.01, 3.0), phi=st.floats(0.01, 3.1), az0=st.floats(-3.1, 3.1))
def test_same_arc_distance_keeps_radius_and_angle(d, phi, az0):
    # spherical oracle: points at colatitude d and longitudes az0, az0 + phi
    pts = [[np.sin(d) * np.cos(a), np.sin(d) * np.sin(a), np.cos(d)] for a in (az0, az0 + phi)]
    proj = project_azimuthal_equidistant(layout_from(pts + [[0, 0, 1]]))
    r = np.linalg.norm(proj.points[:2], axis=1)
    np.testing.assert_allclose(r, d, atol=1e-12)
    u, v = proj.points[0], proj.points[1]
    ang = np.arctan2(u[0] * v[1] - u[1] * v[0], u @ v)
    assert ang == pytest.approx(phi, abs=1e-9)


def test_radial_isometry_on_random_electrodes():
    rng = np.random.default_rng(0)
    lay = layout_from(random_cap(rng, 1000))
    proj = project_azimuthal_equidistant(lay)
    arc = np.arccos(np.clip(lay.positions[:, 2], -1, 1))
    assert np.max(np.abs(np.linalg.norm(proj.points, axis=1) - arc)) < 1e-9


def test_antipodal_electrode_named():
    with pytest.raises(ValidationError, match="e1"):
        project_azimuthal_equidistant(layout_from([[0, 0, 1], [0, 0, -1], [1, 0, 0]]))


def test_hull_is_counter_clockwise_and_encloses():
    proj = project_azimuthal_equidistant(fibonacci_layout(125))
    hull = proj.points[list(proj.convex_hull)]
    edges = np.roll(hull, -1, axis=0) - hull
    cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
    assert np.all(cross > 0)
    for a, e in zip(hull, edges):
        rel = proj.points - a
        assert np.all(e[0] * rel[:, 1] - e[1] * rel[:, 0] >= -1e-12)


def test_fibonacci_layout_invariants():
    lay = fibonacci_layout(125)
    assert len(lay) == 125
    np.testing.assert_allclose(np.linalg.norm(lay.positions, axis=1), 1.0, atol=1e-12)
    assert lay.positions[:, 2].min() >= 0.05
    assert len(set(lay.labels)) == 125


def test_layout_rejects_off_sphere():
    with pytest.raises(ValidationError, match="x1"):
        ElectrodeLayout(np.array([[0, 0, 1.0], [0, 0.5, 0.5], [1.0, 0, 0]]), ("x0", "x1", "x2"))


# triangulation --------------------------------------------------------------


def brute_force_empty_circles(points, triangles, rel_tol=1e-9):
    """Every vertex outside or on every circumcircle (independent circumcentre formula)."""
    bad = 0
    for t in triangles:
        a, b, c = points[t]
        d = 2 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
        ux = ((a @ a) * (b[1] - c[1]) + (b @ b) * (c[1] - a[1]) + (c @ c) * (a[1] - b[1])) / d
        uy = ((a @ a) * (c[0] - b[0]) + (b @ b) * (a[0] - c[0]) + (c @ c) * (b[0] - a[0])) / d
        centre = np.array([ux, uy])
        r = np.linalg.norm(a - centre)
        dist = np.linalg.norm(points - centre, axis=1)
        others = np.ones(len(points), bool)
        others[t] = False
        bad += int(np.sum(dist[others] < r * (1 - rel_tol)))
    return bad


def area(p, t):
    a, b, c = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def test_square_uses_lowest_index_diagonal():
    tri = delaunay_triangulate(np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]]))
    assert len(tri.triangles) == 2
    assert all(0 in t and 2 in t for t in tri.triangles.tolist())
    tri = delaunay_triangulate(np.array([[1, 0], [0, 0], [0, 1], [1, 1.0]]))
    assert all(0 in t and 2 in t for t in tri.triangles.tolist())


def test_three_points_one_triangle():
    tri = delaunay_triangulate(np.array([[0, 0], [2, 0], [0, 1.0]]))
    assert tri.triangles.tolist() == [[0, 1, 2]]
    assert tri.neighbors.tolist() == [[-1, -1, -1]]


def test_collinear_rejected():
    with pytest.raises(ValidationError, match="collinear"):
        delaunay_triangulate(np.array([[0, 0], [1, 1], [2, 2], [3, 3.0]]))


def test_regular_polygon_is_fan_from_lowest_index():
    ang = np.array([3, 0, 5, 1, 4, 2]) * np.pi / 3
    tri = delaunay_triangulate(np.stack([np.cos(ang), np.sin(ang)], axis=1))
    assert len(tri.triangles) == 4
    assert all(0 in t for t in tri.triangles.tolist())


@pytest.mark.parametrize("seed", range(3))
def test_random_cloud_empty_circumcircles_and_exact_cover(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-1, 1, (200, 2))
    tri = delaunay_triangulate(p)
    assert brute_force_empty_circles(p, tri.triangles) == 0
    a = area(p, tri.triangles)
    assert np.all(a > 0)
    proj_hull = np.array(__import__("neurotopo.geometry", fromlist=["convex_hull"]).convex_hull(p))
    h = p[proj_hull]
    hull_area = 0.5 * np.sum(h[:, 0] * np.roll(h[:, 1], -1) - np.roll(h[:, 0], -1) * h[:, 1])
    assert a.sum() == pytest.approx(hull_area, rel=1e-12)
    # random probes each fall strictly inside at most one triangle
    q = rng.uniform(-1, 1, (3000, 2))
    t = tri.triangles
    A, B, C = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]

    def side(u, v):
        return (v[None, :, 0] - u[None, :, 0]) * (q[:, None, 1] - u[None, :, 1]) - (v[None, :, 1] - u[None, :, 1]) * (q[:, None, 0] - u[None, :, 0])

    inside = (side(A, B) > 1e-12) & (side(B, C) > 1e-12) & (side(C, A) > 1e-12)
    assert inside.sum(axis=1).max() <= 1


def test_neighbor_table_is_symmetric():
    tri = delaunay_triangulate(np.random.default_rng(5).uniform(size=(80, 2)))
    for t, row in enumerate(tri.neighbors):
        for k, s in enumerate(row):
            if s < 0:
                continue
            edge = set(tri.triangles[t].tolist()) - {tri.triangles[t][k]}
            assert edge <= set(tri.triangles[s].tolist())
            assert t in tri.neighbors[s]


def test_deterministic_output():
    p = project_azimuthal_equidistant(fibonacci_layout(125)).points
    a = delaunay_triangulate(p)
    b = delaunay_triangulate(p.copy())
    assert np.array_equal(a.triangles, b.triangles)
    assert brute_force_empty_circles(p, a.triangles) == 0


def test_grid_points_with_ties_resolved():
    g = np.array([[x, y] for x in range(5) for y in range(4)], dtype=float)
    tri = delaunay_triangulate(g)
    assert len(tri.triangles) == 2 * 4 * 3
    assert brute_force_empty_circles(g, tri.triangles) == 0
