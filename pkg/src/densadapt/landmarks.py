"""Landmark files, weighted rotational alignment and landmark resampling on the template."""

import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, DegenerateConfigurationError, MeshIOError

logger = logging.getLogger(__name__)

DEFAULT_LANDMARK_COUNT = 38
DEFAULT_ANCHOR_INDEX = 16
DEFAULT_ANCHOR_WEIGHT = 1.0e4


@dataclass
class LandmarkSet:
    """Ordered landmarks; order defines pairing across sets.

    ``indices`` is set when the landmarks are bound to vertices of a mesh.
    """

    points: np.ndarray
    weights: np.ndarray = None
    indices: np.ndarray = None
    header: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.weights is None:
            self.weights = np.ones(len(self.points))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.points),):
            raise ConfigError("one weight per landmark required")
        if np.any(self.weights <= 0):
            raise ConfigError("landmark weights must be positive")
        if self.indices is not None:
            self.indices = np.asarray(self.indices, dtype=np.int64)

    def __len__(self):
        return len(self.points)

    @classmethod
    def from_indices(cls, mesh, indices, weights=None):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= mesh.n_vertices):
            raise ConfigError(f"landmark index out of range [0, {mesh.n_vertices})")
        return cls(mesh.positions[indices], weights, indices)


def anchor_weights(count=DEFAULT_LANDMARK_COUNT, anchor=DEFAULT_ANCHOR_INDEX, value=DEFAULT_ANCHOR_WEIGHT):
    """Unit weights except ``value`` at ``anchor`` (the nose tip for the 38-point face set)."""
    w = np.ones(count)
    if anchor is not None and 0 <= anchor < count:
        w[anchor] = value
    return w


def read_landmarks(path, mesh=None):
    """Parse a landmark file.

    Each non-comment line is ``i <vertex-index>`` or ``p <x> <y> <z>``.
    Index lines are resolved against ``mesh`` when given. Comment lines of the
    form ``# key: value`` are collected into ``header``.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MeshIOError("no such file", path)
    points, indices, header = [], [], {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, value = body.split(":", 1)
                    header[key.strip()] = value.strip()
                continue
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "i" and len(parts) == 2:
                    indices.append(int(parts[1]))
                    points.append(None)
                elif parts[0] == "p" and len(parts) == 4:
                    points.append(tuple(float(v) for v in parts[1:]))
                    indices.append(None)
                else:
                    raise ValueError
            except ValueError:
                raise MeshIOError(f"bad landmark record {line!r}", path, lineno) from None
    has_idx = [i is not None for i in indices]
    if any(has_idx):
        if not all(has_idx):
            raise MeshIOError("cannot mix 'i' and 'p' records", path)
        idx = np.array(indices, dtype=np.int64)
        if mesh is None:
            lm = LandmarkSet(np.zeros((len(idx), 3)), indices=idx)
        else:
            lm = LandmarkSet.from_indices(mesh, idx)
    else:
        lm = LandmarkSet(np.array(points, dtype=np.float64).reshape(-1, 3))
    lm.header = header
    return lm


def write_landmarks(path, landmarks, header=None, as_indices=None):
    """Write ``i`` lines when indices are present (or forced), else ``p`` lines."""
    if as_indices is None:
        as_indices = landmarks.indices is not None
    lines = [f"# {k}: {v}\n" for k, v in (header or landmarks.header or {}).items()]
    if as_indices:
        lines += [f"i {int(i)}\n" for i in landmarks.indices]
    else:
        lines += ["p %.9g %.9g %.9g\n" % tuple(p) for p in landmarks.points.tolist()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def bind_landmarks(fitted, target_landmarks):
    """Index of the fitted-mesh vertex nearest to each target landmark."""
    pts = target_landmarks.points if isinstance(target_landmarks, LandmarkSet) else target_landmarks
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    _, idx = cKDTree(fitted.positions).query(pts)
    idx = np.asarray(idx, dtype=np.int64)
    if len(np.unique(idx)) < len(idx):
        warnings.warn("several landmarks bound to the same vertex", RuntimeWarning, stacklevel=2)
    return idx


def weighted_alignment(moving, reference, weights=None):
    """Rotation ``R`` minimizing ``sum_i w_i ||R c_i - r_i||^2``.

    ``moving`` and ``reference`` are (B, 3) arrays (or :class:`LandmarkSet`).
    The SVD of ``c^T W r = U S V^T`` yields ``R^T = U V^T``; the last column of
    ``U`` is negated when that product is a reflection. Aligned points are
    ``moving @ R.T``. No centering is applied: landmarks live on a
    sphere about the origin.
    """
    c = moving.points if isinstance(moving, LandmarkSet) else np.asarray(moving, dtype=np.float64)
    r = reference.points if isinstance(reference, LandmarkSet) else np.asarray(reference, dtype=np.float64)
    if c.shape != r.shape:
        raise ConfigError(f"landmark sets differ in shape: {c.shape} vs {r.shape}")
    w = np.ones(len(c)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.ndim == 2:
        w = np.diag(w)
    if np.any(w <= 0):
        raise ConfigError("alignment weights must be positive")
    cov = c.T @ (w[:, None] * r)
    u, s, vt = np.linalg.svd(cov)
    scale = s[0] if s[0] > 0 else 1.0
    if s[1] <= 1e-12 * scale:
        raise DegenerateConfigurationError("landmarks are collinear; rotation is not determined")
    if np.linalg.det(u @ vt) < 0:
        u[:, -1] *= -1.0
    rt = u @ vt
    return rt.T


def weighted_residual(moving, reference, rotation, weights):
    aligned = np.asarray(moving) @ rotation.T
    return float(np.sum(np.asarray(weights) * np.sum((aligned - reference) ** 2, axis=1)))


@dataclass
class ResampledLandmarks:
    indices: np.ndarray
    positions: np.ndarray
    average: np.ndarray
    rotations: list
    per_fitting: list


def resample_landmarks(sphere, fittings, weights=None):
    """Place corpus landmarks on the undeformed template.

    Parameters
    ----------
    sphere : TriMesh
        Template in its original (undeformed) configuration.
    fittings : sequence of (TriMesh, LandmarkSet or ndarray)
        Each fitted template with the landmark points of its target. The
        first entry is the alignment reference.
    weights : array_like, optional
        Per-landmark alignment weights; defaults to :func:`anchor_weights`
        when there are 38 landmarks and to ones otherwise.

    Returns
    -------
    ResampledLandmarks
        Template vertex indices nearest to the averaged aligned landmarks.
    """
    fittings = list(fittings)
    if not fittings:
        raise ConfigError("landmark resampling needs at least one fitting")
    sets = []
    counts = set()
    for k, (fitted, lms) in enumerate(fittings):
        if fitted.n_vertices != sphere.n_vertices:
            raise ConfigError(f"fitting {k} has {fitted.n_vertices} vertices, template has {sphere.n_vertices}")
        idx = bind_landmarks(fitted, lms)
        counts.add(len(idx))
        sets.append(sphere.positions[idx])
    if len(counts) != 1:
        raise ConfigError(f"inconsistent landmark counts across fittings: {sorted(counts)}")
    b = counts.pop()
    if weights is None:
        weights = anchor_weights(b) if b == DEFAULT_LANDMARK_COUNT else np.ones(b)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (b,):
        raise ConfigError(f"expected {b} alignment weights, got {weights.shape}")

    ref = sets[0]
    rotations = []
    total = np.zeros_like(ref)
    for c in sets:
        rot = weighted_alignment(c, ref, weights)
        rotations.append(rot)
        total += c @ rot.T
    average = total / len(sets)
    _, idx = cKDTree(sphere.positions).query(average)
    idx = np.asarray(idx, dtype=np.int64)
    return ResampledLandmarks(idx, sphere.positions[idx], average, rotations, sets)


def read_manifest(path):
    """Corpus manifest: ``<target.obj> <landmarks.txt> <fitted.obj>`` per line.

    Relative paths resolve against the manifest's directory.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MeshIOError("no such file", path)
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise MeshIOError("expected 3 paths: target, landmarks, fitted", path, lineno)
            entries.append(tuple(p if os.path.isabs(p) else os.path.join(base, p) for p in parts))
    if not entries:
        raise ConfigError(f"manifest {path} lists no targets")
    return entries
