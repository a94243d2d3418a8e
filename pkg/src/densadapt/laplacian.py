"""Uniform discrete Laplacian, smoothness energies and the diffusion re-parameterization."""

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import ConfigError, MalformedMeshError, SolverError


def build_laplacian(mesh):
    """Uniform-weight Laplacian ``L = I - D^{-1} A`` as a CSR matrix.

    ``(L p)_i = p_i - mean_{j in N(i)} p_j``. Rows sum to zero.
    """
    adj = mesh.adjacency
    valence = np.diff(adj.indptr)
    if (valence == 0).any():
        raise MalformedMeshError(f"vertex {int(np.flatnonzero(valence == 0)[0])} is isolated")
    n = adj.shape[0]
    weights = sparse.diags(1.0 / valence) @ adj
    L = (sparse.identity(n, format="csr") - weights).tocsr()
    L.sort_indices()
    return L


def _check(L, p):
    p = np.asarray(p, dtype=np.float64)
    if p.shape[0] != L.shape[0]:
        raise ConfigError(f"operator has {L.shape[0]} rows but field has {p.shape[0]} entries")
    return p


def laplacian_energy(L, p):
    """``0.5 * tr(p^T L p)``."""
    p = _check(L, p)
    return 0.5 * float(np.sum(p * (L @ p)))


def laplacian_energy_grad(L, p):
    p = _check(L, p)
    return 0.5 * (L @ p + L.T @ p)


def bilaplacian_energy(L, p):
    """``0.5 * sum_i ||(L p)_i||^2``."""
    p = _check(L, p)
    Lp = L @ p
    return 0.5 * float(np.sum(Lp * Lp))


def bilaplacian_energy_grad(L, p):
    p = _check(L, p)
    return L.T @ (L @ p)


class DiffusionSystem:
    """Prefactored ``A = I + lam * L`` for forward, inverse and transposed solves.

    ``A`` is not symmetric with uniform weights, so a sparse LU is used; the
    transpose solve reuses the same factors.
    """

    def __init__(self, L, lam):
        lam = float(lam)
        if not np.isfinite(lam) or lam < 0:
            raise ConfigError(f"diffusion time must be a finite non-negative number, got {lam}")
        self.L = L
        self.lam = lam
        n = L.shape[0]
        self.n = n
        if lam == 0.0:
            self.A = sparse.identity(n, format="csr")
            self._lu = None
            return
        self.A = (sparse.identity(n, format="csc") + lam * L.tocsc()).tocsc()
        try:
            self._lu = splinalg.splu(self.A)
        except RuntimeError as exc:
            raise SolverError(f"factorization of I + {lam} L failed: {exc}") from exc

    def _solve(self, x, trans):
        x = _check(self.A, x)
        if self._lu is None:
            return x.copy()
        out = self._lu.solve(np.ascontiguousarray(x), trans=trans)
        if not np.all(np.isfinite(out)):
            raise SolverError("diffusion solve produced non-finite values")
        return out

    def apply(self, x):
        """``(I + lam L) x``."""
        x = _check(self.A, x)
        if self._lu is None:
            return x.copy()
        return self.A @ x

    def solve(self, x):
        """``(I + lam L)^{-1} x``."""
        return self._solve(x, "N")

    def solve_transpose(self, x):
        """``(I + lam L)^{-T} x``."""
        return self._solve(x, "T")


def diffusion_factorize(L, lam):
    return DiffusionSystem(L, lam)


def to_u(system, p):
    return system.apply(p)


def to_p(system, u):
    return system.solve(u)


def pullback_gradient(system, grad_p):
    """Chain rule through ``p = A^{-1} u``: ``dE/du = A^{-T} dE/dp``."""
    return system.solve_transpose(grad_p)
