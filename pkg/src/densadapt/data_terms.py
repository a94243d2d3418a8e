"""Exact closest-point queries against a target surface and the registration losses."""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError
from .mesh import face_normals, vertex_normals, vertex_normals_vjp

logger = logging.getLogger(__name__)

_QUERY_CHUNK = 16384
_SEED_CANDIDATES = 8


def closest_point_on_triangles(x, a, b, c):
    """Closest points on triangles ``(a, b, c)`` to points ``x``, pairwise.

    All inputs have shape (M, 3). Returns ``(points, bary)`` where ``bary``
    (M, 3) are the barycentric weights of ``a``, ``b`` and ``c``. Follows the
    Voronoi-region walk of Ericson, *Real-Time Collision Detection*, 5.1.5.
    """
    ab = b - a
    ac = c - a
    ap = x - a
    bp = x - b
    cp = x - c
    dot = lambda u, v: np.einsum("ij,ij->i", u, v)  # noqa: E731
    d1, d2 = dot(ab, ap), dot(ac, ap)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    m = len(x)
    bary = np.empty((m, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        # interior, then overwritten by higher-priority regions
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        bary[:] = np.stack([1.0 - v - w, v, w], 1)

        sel = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        bary[sel] = np.stack([np.zeros(m), 1.0 - t, t], 1)[sel]

        sel = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        bary[sel] = np.stack([1.0 - t, np.zeros(m), t], 1)[sel]

        sel = (d6 >= 0) & (d5 <= d6)
        bary[sel] = (0.0, 0.0, 1.0)

        sel = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        bary[sel] = np.stack([1.0 - t, t, np.zeros(m)], 1)[sel]

        sel = (d3 >= 0) & (d4 <= d3)
        bary[sel] = (0.0, 1.0, 0.0)

        sel = (d1 <= 0) & (d2 <= 0)
        bary[sel] = (1.0, 0.0, 0.0)

    bad = ~np.all(np.isfinite(bary), axis=1)
    if bad.any():
        bary[bad] = _degenerate_triangle_bary(x[bad], a[bad], b[bad], c[bad])
    pts = bary[:, :1] * a + bary[:, 1:2] * b + bary[:, 2:] * c
    return pts, bary


def _segment_param(x, p, q):
    d = q - p
    dd = np.einsum("ij,ij->i", d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.einsum("ij,ij->i", x - p, d) / dd
    t = np.where(dd > 0, np.clip(t, 0.0, 1.0), 0.0)
    return t


def _degenerate_triangle_bary(x, a, b, c):
    """Zero-area triangles: best point over the three edges."""
    best = np.full(len(x), np.inf)
    bary = np.zeros((len(x), 3))
    for (i, j), (p, q) in zip(((0, 1), (1, 2), (2, 0)), ((a, b), (b, c), (c, a))):
        t = _segment_param(x, p, q)
        pt = p + t[:, None] * (q - p)
        dist = np.linalg.norm(x - pt, axis=1)
        better = dist < best
        best[better] = dist[better]
        row = np.zeros((len(x), 3))
        row[:, i] = 1.0 - t
        row[:, j] = t
        bary[better] = row[better]
    return bary


@dataclass
class Correspondence:
    """Closest target point per source vertex (frozen during one iteration)."""

    points: np.ndarray
    normals: np.ndarray
    triangles: np.ndarray
    bary: np.ndarray


class SurfaceIndex:
    """Exact nearest-surface-point queries over a target triangle mesh.

    Triangles are bounded by spheres around their centroids and the centroids
    are stored in a k-d tree. A query first gets an upper bound on its
    distance from a few nearby triangles, then tests every triangle whose
    bounding sphere can still beat that bound. Ties go to the lowest triangle
    id, so results are deterministic.
    """

    def __init__(self, target, workers=1):
        if target.n_faces == 0:
            raise ConfigError("target mesh has no triangles")
        self.mesh = target
        self.workers = workers
        p = target.positions
        f = target.faces
        self._a = p[f[:, 0]]
        self._b = p[f[:, 1]]
        self._c = p[f[:, 2]]
        centroids = (self._a + self._b + self._c) / 3.0
        self._radius = np.max(
            np.stack([np.linalg.norm(v - centroids, axis=1) for v in (self._a, self._b, self._c)], 1), axis=1
        )
        self._max_radius = float(self._radius.max())
        self._tree = cKDTree(centroids)
        self._centroids = centroids
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            self.vertex_normals = vertex_normals(target)
        self._face_normals = face_normals(target)

    def _query_chunk(self, x):
        nf = len(self._a)
        k = min(_SEED_CANDIDATES, nf)
        _, seeds = self._tree.query(x, k=k, workers=self.workers)
        seeds = np.asarray(seeds).reshape(len(x), k)
        qi = np.repeat(np.arange(len(x)), k)
        ti = seeds.reshape(-1)
        pts, _ = closest_point_on_triangles(x[qi], self._a[ti], self._b[ti], self._c[ti])
        ub = np.linalg.norm(x[qi] - pts, axis=1).reshape(len(x), k).min(1)

        # bound slack guards against rounding in the sphere test
        reach = ub + self._max_radius
        reach = reach * (1.0 + 1e-9) + 1e-12
        lists = self._tree.query_ball_point(x, reach, workers=self.workers, return_sorted=False)
        counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
        ti = np.fromiter((t for l in lists for t in l), dtype=np.int64, count=int(counts.sum()))
        qi = np.repeat(np.arange(len(x)), counts)
        cdist = np.linalg.norm(x[qi] - self._centroids[ti], axis=1)
        keep = cdist - self._radius[ti] <= ub[qi] * (1.0 + 1e-9) + 1e-12
        qi, ti = qi[keep], ti[keep]

        pts, bary = closest_point_on_triangles(x[qi], self._a[ti], self._b[ti], self._c[ti])
        dist = np.linalg.norm(x[qi] - pts, axis=1)
        # per query: min distance, ties to lowest triangle id
        order = np.lexsort((ti, dist, qi))
        first = np.ones(len(order), dtype=bool)
        first[1:] = qi[order][1:] != qi[order][:-1]
        pick = order[first]
        out_pts = np.empty_like(x)
        out_tri = np.empty(len(x), dtype=np.int64)
        out_bary = np.empty((len(x), 3))
        out_pts[qi[pick]] = pts[pick]
        out_tri[qi[pick]] = ti[pick]
        out_bary[qi[pick]] = bary[pick]
        return out_pts, out_tri, out_bary

    def query(self, x):
        """Return ``(points, triangle_ids, barycentrics)`` for query points ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        pts = np.empty_like(x)
        tri = np.empty(len(x), dtype=np.int64)
        bary = np.empty((len(x), 3))
        for s in range(0, len(x), _QUERY_CHUNK):
            sl = slice(s, s + _QUERY_CHUNK)
            pts[sl], tri[sl], bary[sl] = self._query_chunk(x[sl])
        return pts, tri, bary

    def distance(self, x):
        pts, _, _ = self.query(x)
        return np.linalg.norm(np.atleast_2d(x) - pts, axis=1)

    def interpolate_normals(self, triangles, bary):
        """Barycentric blend of target vertex normals, renormalized."""
        f = self.mesh.faces[triangles]
        vn = self.vertex_normals
        n = bary[:, :1] * vn[f[:, 0]] + bary[:, 1:2] * vn[f[:, 1]] + bary[:, 2:] * vn[f[:, 2]]
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        small = norm[:, 0] < 1e-12
        n = np.divide(n, norm, out=np.zeros_like(n), where=~small[:, None])
        if small.any():
            n[small] = self._face_normals[triangles[small]]
        return n


def build_index(target_mesh, workers=1):
    return SurfaceIndex(target_mesh, workers=workers)


def closest_points(index, p):
    """Globally nearest target-surface point and interpolated normal per vertex."""
    pts, tri, bary = index.query(p)
    return Correspondence(pts, index.interpolate_normals(tri, bary), tri, bary)


def chamfer_loss(p, corr, eps=1e-12):
    """Mean unsquared distance to the frozen correspondences, with gradient."""
    p = np.asarray(p, dtype=np.float64)
    n = len(p)
    d = p - corr.points
    dist = np.linalg.norm(d, axis=1)
    active = dist >= eps
    grad = np.zeros_like(p)
    grad[active] = d[active] / (dist[active, None] * n)
    return float(dist.sum()) / n, grad


def normal_loss(mesh, corr, positions=None):
    """Mean ``1 - n_i . n_hat_i`` with the gradient flowing through source normals."""
    m = mesh if positions is None else mesh.with_positions(positions)
    n = m.n_vertices
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        normals, bad = vertex_normals(m, return_degenerate=True)
    if bad.any():
        warnings.warn(
            f"{int(bad.sum())} source vertices have degenerate normals; they contribute 1 and no gradient",
            RuntimeWarning,
            stacklevel=2,
        )
    dots = np.einsum("ij,ij->i", normals, corr.normals)
    dots[bad] = 0.0
    value = float(np.sum(1.0 - dots)) / n
    g_normals = -corr.normals / n
    g_normals[bad] = 0.0
    return value, vertex_normals_vjp(m, g_normals)


def landmark_loss(p, indices, targets):
    """``(1/B) * sum ||p[idx_i] - k_i||^2`` with gradient on the landmark vertices."""
    p = np.asarray(p, dtype=np.float64)
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    if len(indices) == 0:
        raise ConfigError("landmark loss needs at least one landmark")
    if len(indices) != len(targets):
        raise ConfigError(f"{len(indices)} landmark indices but {len(targets)} target points")
    if indices.min() < 0 or indices.max() >= len(p):
        raise ConfigError(f"landmark index out of range [0, {len(p)})")
    b = len(indices)
    diff = p[indices] - targets
    grad = np.zeros_like(p)
    np.add.at(grad, indices, (2.0 / b) * diff)
    return float(np.sum(diff * diff)) / b, grad
