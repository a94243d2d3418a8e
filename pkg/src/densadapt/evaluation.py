"""Mesh-to-mesh error metrics based on area-weighted surface sampling."""

from dataclasses import dataclass

import numpy as np

from .data_terms import build_index

DEFAULT_SAMPLES = 100_000


def sample_surface(mesh, count, rng):
    """Uniform area-weighted samples: ``(points, triangle_ids, barycentrics)``."""
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    tri = rng.choice(len(areas), size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], 1)
    f = mesh.faces[tri]
    p = mesh.positions
    pts = bary[:, :1] * p[f[:, 0]] + bary[:, 1:2] * p[f[:, 1]] + bary[:, 2:] * p[f[:, 2]]
    return pts, tri, bary


@dataclass
class EvalResult:
    chamfer: float
    normal_mse: float
    chamfer_ab: float
    chamfer_ba: float
    normal_mse_ab: float
    normal_mse_ba: float
    samples: int
    seed: int

    def to_dict(self):
        return dict(self.__dict__)


def _one_way(src, dst_index, count, rng, src_weights=None, dst_weights=None):
    src_index = build_index(src)
    pts, tri, bary = sample_surface(src, count, rng)
    n_src = src_index.interpolate_normals(tri, bary)
    near, ntri, nbary = dst_index.query(pts)
    n_dst = dst_index.interpolate_normals(ntri, nbary)
    dist = np.linalg.norm(pts - near, axis=1)
    nerr = np.sum((n_src - n_dst) ** 2, axis=1)
    w = None
    if src_weights is not None:
        w = _interp_scalar(src, src_weights, tri, bary)
    elif dst_weights is not None:
        w = _interp_scalar(dst_index.mesh, dst_weights, ntri, nbary)
    if w is None:
        return float(dist.mean()), float(nerr.mean())
    return float(np.average(dist, weights=w)), float(np.average(nerr, weights=w))


def _interp_scalar(mesh, values, tri, bary):
    f = mesh.faces[tri]
    v = np.asarray(values, dtype=np.float64)
    return bary[:, 0] * v[f[:, 0]] + bary[:, 1] * v[f[:, 1]] + bary[:, 2] * v[f[:, 2]]


def evaluate(fitted, ground_truth, samples=DEFAULT_SAMPLES, seed=0, weights=None):
    """Symmetric sampled Chamfer distance and normal MSE.

    ``samples`` points are drawn on each surface; each direction averages the
    distance to the other surface and the squared difference of the
    interpolated unit normals there. Reported values are the mean of both
    directions. Optional per-vertex ``weights`` live on ``ground_truth`` and
    weight samples (or their closest points) by interpolated value.
    """
    rng = np.random.default_rng(seed)
    gt_index = build_index(ground_truth)
    fit_index = build_index(fitted)
    c_ab, n_ab = _one_way(fitted, gt_index, samples, rng, dst_weights=weights)
    c_ba, n_ba = _one_way(ground_truth, fit_index, samples, rng, src_weights=weights)
    return EvalResult(
        chamfer=0.5 * (c_ab + c_ba),
        normal_mse=0.5 * (n_ab + n_ba),
        chamfer_ab=c_ab,
        chamfer_ba=c_ba,
        normal_mse_ab=n_ab,
        normal_mse_ba=n_ba,
        samples=samples,
        seed=seed,
    )


def read_vertex_weights(path, n_vertices=None):
    w = np.loadtxt(path, dtype=np.float64, comments="#").reshape(-1)
    if n_vertices is not None and len(w) != n_vertices:
        raise ValueError(f"weight file has {len(w)} entries, mesh has {n_vertices} vertices")
    if np.any(w < 0):
        raise ValueError("vertex weights must be non-negative")
    return w
