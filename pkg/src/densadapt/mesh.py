"""Triangle mesh container, connectivity, normals and template generation."""

import logging
import warnings

import numpy as np
from scipy import sparse
from scipy.spatial import ConvexHull

from .errors import ConfigError, MalformedMeshError

logger = logging.getLogger(__name__)

MAX_SUBDIVISIONS = 8
_FALLBACK_NORMAL = np.array([0.0, 0.0, 1.0])


class TriMesh:
    """Triangle mesh with fixed connectivity and replaceable vertex positions.

    Parameters
    ----------
    positions : array_like, shape (N, 3)
        Vertex coordinates.
    faces : array_like, shape (F, 3)
        Zero-based vertex indices, counter-clockwise.

    Attributes
    ----------
    positions : ndarray, shape (N, 3)
        Vertex coordinates (float64). Owned by whoever optimizes the mesh.
    faces : ndarray, shape (F, 3)
        Read-only face array.
    edges : ndarray, shape (E, 2)
        Unique undirected edges with ``edges[:, 0] < edges[:, 1]``.
    one_ring : list of ndarray
        Sorted neighbor indices for each vertex.
    """

    def __init__(self, positions, faces, _connectivity=None):
        positions = np.array(positions, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise MalformedMeshError(f"positions must have shape (N, 3), got {positions.shape}")
        self.positions = positions
        if _connectivity is not None:
            self.faces, self.edges, self.adjacency, self.one_ring = _connectivity
            return

        faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
        n = len(positions)
        if faces.size and (faces.min() < 0 or faces.max() >= n):
            bad = int(np.flatnonzero((faces < 0).any(1) | (faces >= n).any(1))[0])
            raise MalformedMeshError(f"face {bad} references a vertex outside [0, {n})")
        degenerate = (
            (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
        )
        if degenerate.any():
            bad = int(np.flatnonzero(degenerate)[0])
            raise MalformedMeshError(f"face {bad} has repeated vertex {faces[bad].tolist()}")
        faces.setflags(write=False)
        self.faces = faces

        directed = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        undirected = np.sort(directed, axis=1)
        edges = np.unique(undirected, axis=0)
        edges.setflags(write=False)
        self.edges = edges

        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        adj.sort_indices()
        self.adjacency = adj
        self.one_ring = [adj.indices[adj.indptr[i]:adj.indptr[i + 1]] for i in range(n)]

        valence = np.diff(adj.indptr)
        if (valence == 0).any():
            bad = int(np.flatnonzero(valence == 0)[0])
            raise MalformedMeshError(f"vertex {bad} is isolated (no incident face)")

    @property
    def n_vertices(self):
        return len(self.positions)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def valence(self):
        return np.diff(self.adjacency.indptr)

    def with_positions(self, positions):
        """Return a mesh sharing this mesh's connectivity with new positions."""
        positions = np.asarray(positions, dtype=np.float64)
        if positions.shape != self.positions.shape:
            raise MalformedMeshError(
                f"positions shape {positions.shape} does not match mesh {self.positions.shape}"
            )
        return TriMesh(
            positions.copy(), None, _connectivity=(self.faces, self.edges, self.adjacency, self.one_ring)
        )

    def copy(self):
        return self.with_positions(self.positions)

    def edge_lengths(self):
        e = self.positions[self.edges[:, 0]] - self.positions[self.edges[:, 1]]
        return np.linalg.norm(e, axis=1)

    def face_areas(self):
        return 0.5 * np.linalg.norm(face_normals(self, normalize=False), axis=1)

    def __repr__(self):
        return f"TriMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"


def build_mesh(positions, faces):
    """Validate ``faces`` against ``positions`` and derive one-ring adjacency."""
    return TriMesh(positions, faces)


def icosphere(subdivisions=0, radius=1.0):
    """Subdivided icosahedron with ``10 * 4**subdivisions + 2`` vertices on a sphere."""
    if not isinstance(subdivisions, (int, np.integer)) or not 0 <= subdivisions <= MAX_SUBDIVISIONS:
        raise ConfigError(f"subdivisions must be an integer in [0, {MAX_SUBDIVISIONS}], got {subdivisions!r}")
    if not radius > 0:
        raise ConfigError(f"radius must be positive, got {radius!r}")

    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)

    for _ in range(subdivisions):
        n = len(verts)
        directed = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        keys = np.sort(directed, axis=1)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        mid = verts[edges[:, 0]] + verts[edges[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        verts = np.vstack([verts, mid])
        nf = len(faces)
        m01 = n + inverse[:nf]
        m12 = n + inverse[nf:2 * nf]
        m20 = n + inverse[2 * nf:]
        a, b, c = faces.T
        faces = np.concatenate(
            [
                np.stack([a, m01, m20], 1),
                np.stack([b, m12, m01], 1),
                np.stack([c, m20, m12], 1),
                np.stack([m01, m12, m20], 1),
            ]
        )
    return TriMesh(verts * radius, faces)


def random_sphere_mesh(n_vertices, seed=0, jitter=0.0, density_bias=0.0):
    """Convex-hull triangulation of random points on the unit sphere.

    Parameters
    ----------
    n_vertices : int
        Number of sample points (all become vertices).
    seed : int
        Seed for ``numpy.random.default_rng``.
    jitter : float
        Relative radial noise applied after triangulation.
    density_bias : float
        When positive, samples concentrate towards the +z pole, producing
        an irregular mesh density. ``0`` gives uniform sampling.
    """
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n_vertices, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    if density_bias > 0:
        # warp polar angle towards +z: z' = 1 - 2((1-z)/2)^(1+bias)
        s = ((1.0 - pts[:, 2]) / 2.0) ** (1.0 + density_bias)
        z = 1.0 - 2.0 * s
        rho = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        phi = np.arctan2(pts[:, 1], pts[:, 0])
        pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], 1)
    hull = ConvexHull(pts)
    faces = hull.simplices.copy()
    # orient outward
    fn = np.cross(pts[faces[:, 1]] - pts[faces[:, 0]], pts[faces[:, 2]] - pts[faces[:, 0]])
    flip = np.einsum("ij,ij->i", fn, pts[faces].mean(1)) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    if jitter:
        pts = pts * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=(n_vertices, 1)))
    used = np.unique(faces)
    if len(used) != n_vertices:
        remap = -np.ones(n_vertices, dtype=np.int64)
        remap[used] = np.arange(len(used))
        pts, faces = pts[used], remap[faces]
    return TriMesh(pts, faces)


def face_normals(mesh, normalize=True):
    """Per-face normals; unnormalized vectors have length ``2 * area``."""
    p = mesh.positions
    f = mesh.faces
    n = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])
    if normalize:
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    return n


def scatter_add(index, values, n):
    """Sum rows of ``values`` (M, 3) into ``n`` slots given by ``index`` (M,)."""
    return np.stack([np.bincount(index, weights=values[:, k], minlength=n) for k in range(3)], axis=1)


def _accumulated_normals(mesh):
    fn = face_normals(mesh, normalize=False)
    return scatter_add(mesh.faces.T.reshape(-1), np.tile(fn, (3, 1)), mesh.n_vertices)


def vertex_normals(mesh, return_degenerate=False):
    """Area-weighted unit vertex normals.

    Vertices whose accumulated normal vanishes get ``(0, 0, 1)`` and a
    warning. With ``return_degenerate=True`` a boolean mask of those
    vertices is returned as well.
    """
    acc = _accumulated_normals(mesh)
    norm = np.linalg.norm(acc, axis=1)
    bad = norm <= np.finfo(np.float64).tiny
    normals = np.empty_like(acc)
    normals[~bad] = acc[~bad] / norm[~bad, None]
    if bad.any():
        normals[bad] = _FALLBACK_NORMAL
        warnings.warn(
            f"{int(bad.sum())} vertices have a zero accumulated normal; using {_FALLBACK_NORMAL.tolist()}",
            RuntimeWarning,
            stacklevel=2,
        )
    if return_degenerate:
        return normals, bad
    return normals


def vertex_normals_vjp(mesh, grad_normals):
    """Pull a gradient on unit vertex normals back to vertex positions.

    Given ``G = dE/dn`` (N, 3), returns ``dE/dp`` (N, 3). Degenerate vertices
    (zero accumulated normal) contribute nothing.
    """
    p = mesh.positions
    f = mesh.faces
    acc = _accumulated_normals(mesh)
    norm = np.linalg.norm(acc, axis=1)
    ok = norm > np.finfo(np.float64).tiny
    n = np.zeros_like(acc)
    n[ok] = acc[ok] / norm[ok, None]
    # d(a/|a|)^T g = (g - n (n.g)) / |a|
    g = np.asarray(grad_normals, dtype=np.float64)
    g_acc = np.zeros_like(acc)
    g_acc[ok] = (g[ok] - n[ok] * np.einsum("ij,ij->i", n[ok], g[ok])[:, None]) / norm[ok, None]

    g_face = g_acc[f[:, 0]] + g_acc[f[:, 1]] + g_acc[f[:, 2]]
    e1 = p[f[:, 1]] - p[f[:, 0]]
    e2 = p[f[:, 2]] - p[f[:, 0]]
    # c = e1 x e2  =>  dc^T G: de1 = e2 x G, de2 = G x e1
    d_e1 = np.cross(e2, g_face)
    d_e2 = np.cross(g_face, e1)
    return scatter_add(f.T.reshape(-1), np.concatenate([-(d_e1 + d_e2), d_e1, d_e2]), len(p))


def euler_characteristic(mesh):
    return mesh.n_vertices - len(mesh.edges) + mesh.n_faces
