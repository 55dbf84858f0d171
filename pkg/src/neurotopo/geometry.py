"""Electrode layouts, azimuthal-equidistant projection and Delaunay triangulation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay as _QhullDelaunay

from .errors import ValidationError

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True)
class ElectrodeLayout:
    positions: np.ndarray  # n x 3 unit vectors
    labels: tuple

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValidationError(f"positions must be n x 3, got {pos.shape}")
        if len(self.labels) != len(pos):
            raise ValidationError(f"{len(self.labels)} labels for {len(pos)} positions")
        norms = np.linalg.norm(pos, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-6)
        if bad.size:
            raise ValidationError(f"electrode {self.labels[bad[0]]} is not on the unit sphere (|p| = {norms[bad[0]]:.9f})")
        if len(np.unique(np.round(pos, 12), axis=0)) != len(pos):
            raise ValidationError("electrode positions are not distinct")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "labels", tuple(str(l) for l in self.labels))

    def __len__(self):
        return len(self.labels)


def fibonacci_layout(n: int, z_min: float = 0.05) -> ElectrodeLayout:
    """Quasi-uniform ``n`` electrodes on the cap z >= z_min, equal-area in z."""
    if n < 3:
        raise ValidationError(f"need at least 3 electrodes, got {n}")
    i = np.arange(n)
    z = 1.0 - (1.0 - z_min) * (i + 0.5) / n
    r = np.sqrt(1.0 - z**2)
    phi = i * GOLDEN_ANGLE
    pos = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    pos /= np.linalg.norm(pos, axis=1, keepdims=True)
    return ElectrodeLayout(pos, tuple(f"E{k + 1:03d}" for k in i))


@dataclass(frozen=True)
class ProjectedLayout:
    points: np.ndarray  # n x 2
    convex_hull: tuple  # counter-clockwise vertex indices
    labels: tuple = ()


def _tangent_frame(apex):
    apex = np.asarray(apex, dtype=float)
    apex = apex / np.linalg.norm(apex)
    ref = np.array([1.0, 0.0, 0.0]) if abs(apex[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = ref - apex * (ref @ apex)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(apex, e1)
    return apex, e1, e2


def project_azimuthal_equidistant(layout: ElectrodeLayout, apex=(0.0, 0.0, 1.0)) -> ProjectedLayout:
    """Map each electrode to the plane at radius = arc distance from ``apex``.

    For the default apex (0, 0, 1) the azimuth is measured from +x, so the
    equator point (1, 0, 0) lands at (pi/2, 0).
    """
    apex, e1, e2 = _tangent_frame(apex)
    pos = layout.positions
    cos_d = np.clip(pos @ apex, -1.0, 1.0)
    # arctan2 keeps full precision near the apex where arccos does not
    sin_d = np.linalg.norm(np.cross(pos, apex), axis=1)
    dist = np.arctan2(sin_d, cos_d)
    anti = np.flatnonzero(np.pi - dist < 1e-9)
    if anti.size:
        raise ValidationError(f"electrode {layout.labels[anti[0]]} sits at the antipode of the projection apex")
    az = np.arctan2(pos @ e2, pos @ e1)
    pts = np.stack([dist * np.cos(az), dist * np.sin(az)], axis=1)
    return ProjectedLayout(pts, tuple(convex_hull(pts)), layout.labels)


def convex_hull(points) -> list:
    """Monotone-chain hull, counter-clockwise, collinear boundary points dropped."""
    pts = np.asarray(points, dtype=float)
    order = sorted(range(len(pts)), key=lambda i: (pts[i, 0], pts[i, 1], i))

    def cross(o, a, b):
        return (pts[a, 0] - pts[o, 0]) * (pts[b, 1] - pts[o, 1]) - (pts[a, 1] - pts[o, 1]) * (pts[b, 0] - pts[o, 0])

    lower, upper = [], []
    for i in order:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], i) <= 0:
            lower.pop()
        lower.append(i)
    for i in reversed(order):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], i) <= 0:
            upper.pop()
        upper.append(i)
    return lower[:-1] + upper[:-1]


@dataclass(frozen=True)
class Triangulation:
    points: np.ndarray  # n x 2
    triangles: np.ndarray  # t x 3, counter-clockwise, smallest index first
    neighbors: np.ndarray = field(repr=False)  # t x 3; entry k is across the edge opposite vertex k, -1 on the hull

    @property
    def vertices(self) -> np.ndarray:
        return np.arange(len(self.points))

    def vertex_neighbors(self) -> list:
        """Sorted 1-ring of every vertex."""
        ring = [set() for _ in range(len(self.points))]
        for a, b, c in self.triangles:
            ring[a] |= {b, c}
            ring[b] |= {a, c}
            ring[c] |= {a, b}
        return [sorted(r) for r in ring]


def incircle(a, b, c, d) -> float:
    """Scale-free in-circle predicate: > 0 when d is inside the circle through ccw a, b, c.

    Normalized by the fourth power of the mean edge length so one tolerance
    works for any point-cloud scale.
    """
    m = np.array(
        [
            [a[0] - d[0], a[1] - d[1], (a[0] - d[0]) ** 2 + (a[1] - d[1]) ** 2],
            [b[0] - d[0], b[1] - d[1], (b[0] - d[0]) ** 2 + (b[1] - d[1]) ** 2],
            [c[0] - d[0], c[1] - d[1], (c[0] - d[0]) ** 2 + (c[1] - d[1]) ** 2],
        ]
    )
    scale = (np.linalg.norm(a - b) + np.linalg.norm(b - c) + np.linalg.norm(c - a)) / 3
    return float(np.linalg.det(m) / scale**4)


def _orient(p, a, b, c):
    return (p[b, 0] - p[a, 0]) * (p[c, 1] - p[a, 1]) - (p[b, 1] - p[a, 1]) * (p[c, 0] - p[a, 0])


def _canonical(tri):
    a, b, c = tri
    k = int(np.argmin(tri))
    return tuple(int(v) for v in (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]))


def _neighbor_table(triangles):
    edge_owner = {}
    nbr = -np.ones((len(triangles), 3), dtype=int)
    for t, tri in enumerate(triangles):
        for k in range(3):
            e = tuple(sorted((tri[(k + 1) % 3], tri[(k + 2) % 3])))
            if e in edge_owner:
                s, j = edge_owner.pop(e)
                nbr[t, k] = s
                nbr[s, j] = t
            else:
                edge_owner[e] = (t, k)
    return nbr


def delaunay_triangulate(points, tol: float = 1e-9) -> Triangulation:
    """Delaunay triangulation with deterministic resolution of co-circular ties.

    Qhull supplies the initial triangulation. A Lawson pass then visits
    every interior edge: an edge is flipped if the opposite vertex is
    strictly inside the circumcircle, and among co-circular quadrilaterals the
    diagonal touching the lowest vertex index is kept.
    """
    if isinstance(points, ProjectedLayout):
        points = points.points
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) < 3:
        raise ValidationError(f"need at least 3 planar points, got shape {p.shape}")
    span = np.ptp(p, axis=0).max()
    centered = p - p.mean(axis=0)
    if span == 0 or np.linalg.svd(centered, compute_uv=False)[-1] <= 1e-12 * span * np.sqrt(len(p)):
        raise ValidationError("all points are collinear; no triangulation exists")

    simplices = _QhullDelaunay(p, qhull_options="Qbb Qc Qz Q12").simplices
    tris = []
    for a, b, c in simplices:
        if _orient(p, a, b, c) < 0:
            b, c = c, b
        tris.append(list(_canonical((a, b, c))))

    for _ in range(10 * len(tris) + 10):
        if not _lawson_pass(p, tris, tol):
            break

    tris = sorted(_canonical(t) for t in tris)
    tri_arr = np.array(tris, dtype=int)
    return Triangulation(p, tri_arr, _neighbor_table(tri_arr))


def _lawson_pass(p, tris, tol):
    nbr = _neighbor_table(np.array(tris))
    for t in range(len(tris)):
        for k in range(3):
            s = nbr[t, k]
            if s < t:
                continue
            tri = tris[t]
            d_tri = tris[s]
            a, b, c = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]  # edge (b, c) is shared
            d = next(v for v in d_tri if v not in (b, c))
            val = incircle(p[a], p[b], p[c], p[d])
            flip = val > tol
            if abs(val) <= tol and min(a, d) < min(b, c):
                flip = True
            if flip and _orient(p, a, b, d) > 0 and _orient(p, a, d, c) > 0:
                tris[t] = list(_canonical((a, b, d)))
                tris[s] = list(_canonical((a, d, c)))
                return True
    return False
