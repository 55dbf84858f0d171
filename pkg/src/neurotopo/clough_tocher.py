"""Piecewise-cubic C1 interpolation on a Hsieh-Clough-Tocher split.

Every triangle is split at its centroid into three cubic Bezier patches.
Vertex gradients come from a least-squares plane fit over each vertex's
1-ring. Across each outer edge the derivative normal to the edge is forced
to be linear along it; both sides of an interior edge then agree on value
and normal derivative, so the surface is C1 everywhere.

Control-point names follow ``cIJKL``: exponents of the barycentric weights of
vertices 1, 2, 3 and the centroid.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .geometry import Triangulation


def estimate_gradients(tri: Triangulation, values) -> np.ndarray:
    """Least-squares gradient at each vertex from its 1-ring neighbours."""
    return np.einsum("nkj,j->nk", _gradient_operators(tri), np.asarray(values, dtype=float))


def _gradient_operators(tri: Triangulation) -> np.ndarray:
    # returns G (n, 2, n) such that grad_i = G[i] @ values
    n = len(tri.points)
    ops = np.zeros((n, 2, n))
    for i, ring in enumerate(tri.vertex_neighbors()):
        d = tri.points[ring] - tri.points[i]
        pinv = np.linalg.pinv(d)  # 2 x k
        ops[i][:, ring] = pinv
        ops[i][:, i] = -pinv.sum(axis=1)
    return ops


def _edge_factors(tri: Triangulation) -> np.ndarray:
    """Per-triangle ratio beta/alpha writing the edge normal as alpha*(C-A) + beta*(B-A).

    Edge k is opposite vertex k; (A, B) walk the triangle counter-clockwise
    and C is the centroid.
    """
    p = tri.points[tri.triangles]  # t x 3 x 2
    cen = p.mean(axis=1)
    g = np.empty((len(p), 3))
    for k in range(3):
        a = p[:, (k + 1) % 3]
        b = p[:, (k + 2) % 3]
        ab = b - a
        g[:, k] = -np.einsum("ij,ij->i", cen - a, ab) / np.einsum("ij,ij->i", ab, ab)
    return g


def bezier_control_points(tri: Triangulation, values, grads) -> dict:
    """Control nets of all triangles, keyed by ``cIJKL`` name."""
    t = tri.triangles
    p = tri.points[t]
    f = np.asarray(values, dtype=float)[t]
    gr = np.asarray(grads, dtype=float)[t]
    e12 = p[:, 1] - p[:, 0]
    e23 = p[:, 2] - p[:, 1]
    e31 = p[:, 0] - p[:, 2]

    def dot(u, v):
        return np.einsum("ij,ij->i", u, v)

    c = {}
    c["3000"], c["0300"], c["0030"] = f[:, 0], f[:, 1], f[:, 2]
    c["2100"] = f[:, 0] + dot(gr[:, 0], e12) / 3
    c["2010"] = f[:, 0] - dot(gr[:, 0], e31) / 3
    c["1200"] = f[:, 1] - dot(gr[:, 1], e12) / 3
    c["0210"] = f[:, 1] + dot(gr[:, 1], e23) / 3
    c["1020"] = f[:, 2] + dot(gr[:, 2], e31) / 3
    c["0120"] = f[:, 2] - dot(gr[:, 2], e23) / 3

    # tangent-plane points next to each vertex
    c["2001"] = (c["3000"] + c["2100"] + c["2010"]) / 3
    c["0201"] = (c["0300"] + c["1200"] + c["0210"]) / 3
    c["0021"] = (c["0030"] + c["1020"] + c["0120"]) / 3

    g = _edge_factors(tri)
    # linear normal derivative along each outer edge (A, B) with apex at centroid
    c["0111"] = _edge_interior(g[:, 0], c["0300"], c["0210"], c["0120"], c["0030"], c["0201"], c["0021"])
    c["1011"] = _edge_interior(g[:, 1], c["0030"], c["1020"], c["2010"], c["3000"], c["0021"], c["2001"])
    c["1101"] = _edge_interior(g[:, 2], c["3000"], c["2100"], c["1200"], c["0300"], c["2001"], c["0201"])

    # C1 across the three internal edges and at the centroid
    c["1002"] = (c["1101"] + c["1011"] + c["2001"]) / 3
    c["0102"] = (c["1101"] + c["0111"] + c["0201"]) / 3
    c["0012"] = (c["1011"] + c["0111"] + c["0021"]) / 3
    c["0003"] = (c["1002"] + c["0102"] + c["0012"]) / 3
    return c


def _edge_interior(g, e0, e1, e2, e3, d0, d2):
    return (g * (-e0 + 3 * e1 - 3 * e2 + e3) + (-e0 + 2 * e1 - e2 + d0 + d2)) / 2


def _cubic(u, v, w, c_uuu, c_uuv, c_uvv, c_vvv, c_uuw, c_uvw, c_vvw, c_uww, c_vww, c_www):
    return (
        u**3 * c_uuu
        + 3 * u**2 * v * c_uuv
        + 3 * u * v**2 * c_uvv
        + v**3 * c_vvv
        + 3 * u**2 * w * c_uuw
        + 6 * u * v * w * c_uvw
        + 3 * v**2 * w * c_vvw
        + 3 * u * w**2 * c_uww
        + 3 * v * w**2 * c_vww
        + w**3 * c_www
    )


def evaluate(c: dict, tri_index, bary) -> np.ndarray:
    """Evaluate the patches at points given by owning triangle and barycentric coords."""
    cc = {k: v[tri_index] for k, v in c.items()}
    b = np.asarray(bary, dtype=float)
    m = b.min(axis=1)
    w = 3 * m
    b1, b2, b3 = b[:, 0] - m, b[:, 1] - m, b[:, 2] - m
    sub = np.argmin(b, axis=1)
    out = np.empty(len(b))

    s = sub == 0  # patch on edge 2-3
    out[s] = _cubic(b2[s], b3[s], w[s], *(cc[k][s] for k in ("0300", "0210", "0120", "0030", "0201", "0111", "0021", "0102", "0012", "0003")))
    s = sub == 1  # patch on edge 3-1
    out[s] = _cubic(b3[s], b1[s], w[s], *(cc[k][s] for k in ("0030", "1020", "2010", "3000", "0021", "1011", "2001", "0012", "1002", "0003")))
    s = sub == 2  # patch on edge 1-2
    out[s] = _cubic(b1[s], b2[s], w[s], *(cc[k][s] for k in ("3000", "2100", "1200", "0300", "2001", "1101", "0201", "1002", "0102", "0003")))
    return out


def locate(tri: Triangulation, xy, tol: float = 1e-12):
    """Owning triangle (lowest index wins on shared edges) and barycentric coords.

    Points outside the hull get triangle -1.
    """
    xy = np.asarray(xy, dtype=float)
    p = tri.points[tri.triangles]
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    dx = xy[:, None, 0] - a[None, :, 0]
    dy = xy[:, None, 1] - a[None, :, 1]
    l2 = ((c[:, 1] - a[:, 1]) * dx - (c[:, 0] - a[:, 0]) * dy) / det
    l3 = (-(b[:, 1] - a[:, 1]) * dx + (b[:, 0] - a[:, 0]) * dy) / det
    l1 = 1.0 - l2 - l3
    inside = (l1 >= -tol) & (l2 >= -tol) & (l3 >= -tol)
    found = inside.any(axis=1)
    idx = np.where(found, inside.argmax(axis=1), -1)
    rows = np.arange(len(xy))
    bary = np.zeros((len(xy), 3))
    sel = rows[found]
    bary[sel] = np.stack([l1[sel, idx[sel]], l2[sel, idx[sel]], l3[sel, idx[sel]]], axis=1)
    bary[sel] = np.clip(bary[sel], 0.0, None)
    bary[sel] /= bary[sel].sum(axis=1, keepdims=True)
    return idx, bary


def grid_axes(tri: Triangulation, width: int, height: int):
    """Pixel-centre coordinates spanning the bounding box of the points, edges included."""
    lo = tri.points.min(axis=0)
    hi = tri.points.max(axis=0)
    return np.linspace(lo[0], hi[0], width), np.linspace(lo[1], hi[1], height)


class CloughTocherRaster:
    """Reusable rasterizer for one triangulation and grid.

    Point location, gradient operators and edge factors depend only on the
    geometry, so they are computed once and every call to :meth:`__call__`
    is a handful of vectorized array operations.
    """

    def __init__(self, tri: Triangulation, width: int, height: int | None = None):
        height = width if height is None else height
        if width < 1 or height < 1:
            raise ValidationError(f"grid must be at least 1 x 1, got {width} x {height}")
        self.tri = tri
        self.shape = (width, height)
        xs, ys = grid_axes(tri, width, height)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        self.xy = np.stack([gx.ravel(), gy.ravel()], axis=1)
        self.tri_index, self.bary = locate(tri, self.xy)
        self.mask = (self.tri_index >= 0).reshape(self.shape)
        self._grad_ops = _gradient_operators(tri)
        self._inside = self.tri_index >= 0

    def __call__(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self.tri.points),):
            raise ValidationError(f"expected {len(self.tri.points)} vertex values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("vertex values must be finite")
        grads = np.einsum("nkj,j->nk", self._grad_ops, values)
        c = bezier_control_points(self.tri, values, grads)
        plane = np.zeros(len(self.xy))
        ins = self._inside
        plane[ins] = evaluate(c, self.tri_index[ins], self.bary[ins])
        return plane.reshape(self.shape), self.mask


def clough_tocher_interpolate(tri: Triangulation, values, width: int, height: int | None = None):
    """Rasterize vertex ``values`` onto a width x height grid; returns (plane, mask)."""
    return CloughTocherRaster(tri, width, height)(values)
