"""Per-vertex edge-length statistics, the adaptation energy and its targets.

Mesh density is measured by the mean length of the edges incident to each
vertex. The adaptation energy penalizes the squared deviation of those
lengths from a desired field, which is either uniform (every vertex gets the
global average) or adaptive (lengths shrink where the smoothed Laplacian
magnitude is above average).
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .laplacian import DiffusionSystem
from .mesh import scatter_add

logger = logging.getLogger(__name__)

UNIFORM = "uniform"
ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class EdgeLengthTarget:
    """Desired mean edge length per vertex."""

    lengths: np.ndarray
    kind: str

    def __len__(self):
        return len(self.lengths)


def _directed_edges(mesh):
    e = mesh.edges
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    return src, dst


def mean_edge_lengths(mesh, positions=None):
    """Average length of the edges incident to each vertex."""
    p = mesh.positions if positions is None else positions
    lengths = np.linalg.norm(p[mesh.edges[:, 0]] - p[mesh.edges[:, 1]], axis=1)
    n = len(p)
    total = np.bincount(mesh.edges[:, 0], weights=lengths, minlength=n)
    total += np.bincount(mesh.edges[:, 1], weights=lengths, minlength=n)
    return total / mesh.valence


def average_edge_length(mesh, positions=None):
    """Mean over vertices of :func:`mean_edge_lengths`."""
    return float(np.mean(mean_edge_lengths(mesh, positions)))


def _lengths_array(target):
    return np.asarray(target.lengths if isinstance(target, EdgeLengthTarget) else target, dtype=np.float64)


def adaptation_energy(mesh, target, positions=None):
    """``(1/N) * ||l(p) - l'||^2``."""
    r = mean_edge_lengths(mesh, positions) - _lengths_array(target)
    return float(r @ r) / len(r)


def adaptation_gradient(mesh, target, positions=None):
    """Exact gradient of :func:`adaptation_energy` with respect to positions.

    Each edge (i, j) enters ``l_i`` and ``l_j``, so its direction vector is
    weighted by both residuals. Zero-length edges contribute nothing.
    """
    p = mesh.positions if positions is None else positions
    n = len(p)
    l_target = _lengths_array(target)
    val = mesh.valence
    r = mean_edge_lengths(mesh, p) - l_target

    e = mesh.edges
    d = p[e[:, 0]] - p[e[:, 1]]
    length = np.linalg.norm(d, axis=1)
    zero = length <= 0.0
    if zero.any():
        warnings.warn(
            f"{int(zero.sum())} zero-length edges; their direction terms are dropped",
            RuntimeWarning,
            stacklevel=2,
        )
    unit = np.divide(d, length[:, None], out=np.zeros_like(d), where=~zero[:, None])
    coeff = (2.0 / n) * (r[e[:, 0]] / val[e[:, 0]] + r[e[:, 1]] / val[e[:, 1]])
    contrib = coeff[:, None] * unit
    return scatter_add(np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([contrib, -contrib]), n)


def uniform_target(mesh, positions=None):
    lm = average_edge_length(mesh, positions)
    return EdgeLengthTarget(np.full(len(mesh.positions), lm), UNIFORM)


def curvature_magnitudes(mesh, L, positions=None):
    """``||(L p)_i|| / l_m``: uniform-Laplacian magnitude scaled by the average edge length."""
    p = mesh.positions if positions is None else positions
    return np.linalg.norm(L @ p, axis=1) / average_edge_length(mesh, p)


def smooth_field(K, L, lambda_s=1.0, system=None):
    """One backward-Euler diffusion step ``(I + lambda_s L)^{-1} K``.

    A prefactored ``system`` for the same ``lambda_s`` may be passed to avoid
    refactoring.
    """
    if system is None:
        system = DiffusionSystem(L, lambda_s)
    return system.solve(np.asarray(K, dtype=np.float64))


def adaptive_target(mesh, L, lambda_s=1.0, positions=None, system=None):
    """Current mean edge lengths scaled by ``clamp(mean(S) / S, 0, 1)``.

    Vertices whose smoothed curvature ``S`` exceeds the mean get a shorter
    target; all others keep their current length.
    """
    p = mesh.positions if positions is None else positions
    lengths = mean_edge_lengths(mesh, p)
    K = curvature_magnitudes(mesh, L, p)
    S = smooth_field(K, L, lambda_s, system)
    s_bar = float(np.mean(S))
    if not np.any(S != 0):
        logger.info("curvature field is identically zero; adaptive target equals current lengths")
        return EdgeLengthTarget(lengths, ADAPTIVE)
    ratio = np.ones_like(S)
    pos = S > 0
    ratio[pos] = s_bar / S[pos]
    ratio = np.clip(ratio, 0.0, 1.0)
    return EdgeLengthTarget(lengths * ratio, ADAPTIVE)
