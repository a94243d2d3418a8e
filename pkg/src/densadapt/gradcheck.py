"""Finite-difference verification of every analytic gradient in the package.

Each energy is checked in position space and again composed with the
diffusion parameterization, where the variable is ``u`` and the gradient is
pulled back through the transposed solve. Correspondences, normals and
edge-length targets are frozen at the base point, matching how the
optimizer uses them within an iteration.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import data_terms, density
from .laplacian import (
    DiffusionSystem,
    bilaplacian_energy,
    bilaplacian_energy_grad,
    build_laplacian,
    laplacian_energy,
    laplacian_energy_grad,
)
from .mesh import random_sphere_mesh
from .synthetic import bumpy_sphere

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
DEFAULT_STEP = 1e-5
ENERGIES = ("E_a", "laplacian", "bilaplacian", "D_c", "D_n", "landmark")


@dataclass
class CheckResult:
    energy: str
    n_vertices: int
    max_rel_err: float
    worst_vertex: int
    passed: bool
    step: float

    def to_dict(self):
        return asdict(self)

    def __str__(self):
        status = "ok  " if self.passed else "FAIL"
        return (
            f"{status} {self.energy:<16s} N={self.n_vertices:<5d} h={self.step:.0e} "
            f"max rel err {self.max_rel_err:.3e} (worst vertex {self.worst_vertex})"
        )


def finite_difference(f, x, h=DEFAULT_STEP):
    """Central differences of scalar ``f`` over every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.empty(flat.size)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = f(x)
        flat[k] = orig - h
        down = f(x)
        flat[k] = orig
        out[k] = (up - down) / (2.0 * h)
    return out.reshape(x.shape)


def compare(analytic, numeric):
    """Max absolute deviation relative to the largest FD entry, and the row where it occurs."""
    diff = np.abs(np.asarray(analytic) - numeric)
    scale = float(np.max(np.abs(numeric)))
    rel = float(diff.max()) / scale if scale > 0 else float(diff.max())
    return rel, int(np.unravel_index(np.argmax(diff), diff.shape)[0])


def check_energy(name, f, grad, x, h=DEFAULT_STEP, tol=DEFAULT_TOLERANCE):
    rel, worst = compare(grad(x), finite_difference(f, x, h))
    return CheckResult(name, len(x), rel, worst, rel < tol, h)


def build_problem(n_vertices=200, seed=0):
    """Random closed mesh plus frozen data for every energy.

    Returns the source mesh and a dict ``name -> (f, grad)`` of position-space
    energies.
    """
    rng = np.random.default_rng(seed)
    mesh = random_sphere_mesh(n_vertices, seed=seed, jitter=0.15)
    L = build_laplacian(mesh)
    p0 = mesh.positions

    target_lengths = density.mean_edge_lengths(mesh) * rng.uniform(0.6, 1.4, n_vertices)

    # surface offset from the source so no distance sits near the kink at zero
    target = bumpy_sphere(seed=seed, subdivisions=3)
    target = target.with_positions(1.3 * target.positions)
    corr = data_terms.closest_points(data_terms.build_index(target), p0)

    n_lmk = min(38, n_vertices)
    lmk_idx = rng.choice(n_vertices, size=n_lmk, replace=False)
    lmk_pts = p0[lmk_idx] + rng.normal(scale=0.1, size=(n_lmk, 3))

    def with_p(p):
        return mesh.with_positions(p)

    energies = {
        "E_a": (
            lambda p: density.adaptation_energy(mesh, target_lengths, positions=p),
            lambda p: density.adaptation_gradient(mesh, target_lengths, positions=p),
        ),
        "laplacian": (lambda p: laplacian_energy(L, p), lambda p: laplacian_energy_grad(L, p)),
        "bilaplacian": (lambda p: bilaplacian_energy(L, p), lambda p: bilaplacian_energy_grad(L, p)),
        "D_c": (lambda p: data_terms.chamfer_loss(p, corr)[0], lambda p: data_terms.chamfer_loss(p, corr)[1]),
        "D_n": (
            lambda p: data_terms.normal_loss(with_p(p), corr)[0],
            lambda p: data_terms.normal_loss(with_p(p), corr)[1],
        ),
        "landmark": (
            lambda p: data_terms.landmark_loss(p, lmk_idx, lmk_pts)[0],
            lambda p: data_terms.landmark_loss(p, lmk_idx, lmk_pts)[1],
        ),
    }
    return mesh, L, energies


def compose(system, f, grad):
    """Energy and gradient as functions of ``u`` through ``p = (I + lam L)^-1 u``."""
    return (
        lambda u: f(system.solve(u)),
        lambda u: system.solve_transpose(grad(system.solve(u))),
    )


def run_gradcheck(sizes=(200,), seed=0, lam=19.0, h=DEFAULT_STEP, tol=DEFAULT_TOLERANCE,
                  energies=ENERGIES, corrupt=None):
    """Check all energies and their pullbacks; returns a list of :class:`CheckResult`.

    ``corrupt`` names an energy whose analytic gradient is deliberately
    perturbed at one vertex, to confirm the harness reports failures.
    """
    results = []
    for n in sizes:
        mesh, L, table = build_problem(n, seed)
        system = DiffusionSystem(L, lam)
        u0 = system.apply(mesh.positions)
        for name in energies:
            f, grad = table[name]
            if name == corrupt:
                grad = _corrupted(grad, vertex=n // 2)
            results.append(check_energy(name, f, grad, mesh.positions, h, tol))
            fu, gu = compose(system, f, grad)
            results.append(check_energy(name + "(u)", fu, gu, u0, h, tol))
            logger.info("%s", results[-1])
    return results


def _corrupted(grad, vertex, amount=1e-2):
    def wrong(p):
        g = np.array(grad(p))
        g[vertex] += amount * max(float(np.max(np.abs(g))), 1.0)
        return g

    return wrong


def step_sweep(energy="D_c", steps=(1e-4, 1e-5, 1e-6), n_vertices=200, seed=0):
    """Relative FD error of one energy for each step size (expected V-shaped)."""
    mesh, _, table = build_problem(n_vertices, seed)
    f, grad = table[energy]
    g = grad(mesh.positions)
    return [compare(g, finite_difference(f, mesh.positions, h))[0] for h in steps]
