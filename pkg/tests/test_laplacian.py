import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference, rel_err
from densadapt.errors import ConfigError
from densadapt.laplacian import (
    bilaplacian_energy,
    bilaplacian_energy_grad,
    build_laplacian,
    diffusion_factorize,
    laplacian_energy,
    laplacian_energy_grad,
    pullback_gradient,
    to_p,
    to_u,
)
from densadapt.mesh import build_mesh, icosphere, random_sphere_mesh


def test_row_sums_zero(random100):
    L = build_laplacian(random100)
    assert np.max(np.abs(L @ np.ones(random100.n_vertices))) < 1e-14


def test_constant_positions_in_kernel(random100):
    L = build_laplacian(random100)
    p = np.tile([1.5, -2.0, 0.25], (random100.n_vertices, 1))
    assert np.allclose(L @ p, 0, atol=1e-14)


def test_sparsity_pattern_matches_adjacency(random100):
    L = build_laplacian(random100)
    pattern = (random100.adjacency + np.eye(random100.n_vertices)) != 0
    assert np.array_equal(L.toarray() != 0, np.asarray(pattern))


def test_single_triangle_hand_value():
    m = build_mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    Lp = build_laplacian(m) @ m.positions
    assert np.allclose(Lp[0], [-0.5, -0.5, 0.0], atol=1e-15)


def test_icosahedron_laplacian_radial():
    m = icosphere(0)
    Lp = build_laplacian(m) @ m.positions
    cos = np.einsum("ij,ij->i", Lp, m.positions) / np.linalg.norm(Lp, axis=1)
    assert np.all(np.arccos(np.clip(cos, -1, 1)) < 1e-6)


def test_energies_vanish_on_constants(random100):
    L = build_laplacian(random100)
    p = np.ones((random100.n_vertices, 3))
    assert abs(laplacian_energy(L, p)) < 1e-14
    assert bilaplacian_energy(L, p) < 1e-28
    assert np.allclose(bilaplacian_energy_grad(L, p), 0, atol=1e-14)
    # L is not symmetric, so 0.5 (L + L^T) 1 = 0.5 L^T 1 need not vanish
    col_sums = np.asarray(L.sum(axis=0)).ravel()
    assert np.allclose(laplacian_energy_grad(L, p), 0.5 * col_sums[:, None] * p, atol=1e-14)


def test_laplacian_gradient_vanishes_on_constants_for_regular_mesh():
    m = icosphere(0)
    L = build_laplacian(m)
    assert np.allclose(laplacian_energy_grad(L, np.ones((12, 3))), 0, atol=1e-14)


@pytest.mark.parametrize(
    "energy,grad",
    [(laplacian_energy, laplacian_energy_grad), (bilaplacian_energy, bilaplacian_energy_grad)],
)
def test_energy_gradients_fd(random100, energy, grad):
    L = build_laplacian(random100)
    p = random100.positions
    g_fd = central_difference(lambda x: energy(L, x), p)
    assert rel_err(grad(L, p), g_fd) < 1e-5


def test_bilaplacian_nonnegative(rng):
    m = random_sphere_mesh(80, seed=1)
    L = build_laplacian(m)
    for _ in range(10):
        assert bilaplacian_energy(L, rng.normal(size=(80, 3))) >= 0


def test_dimension_mismatch(random100):
    L = build_laplacian(random100)
    with pytest.raises(ConfigError):
        laplacian_energy(L, np.zeros((3, 3)))


def test_lambda_zero_identity(random100, rng):
    sys = diffusion_factorize(build_laplacian(random100), 0.0)
    x = rng.normal(size=(random100.n_vertices, 3))
    assert np.array_equal(sys.solve(x), x)
    assert np.array_equal(to_u(sys, x), x)
    assert np.array_equal(pullback_gradient(sys, x), x)


def test_negative_lambda_rejected(random100):
    with pytest.raises(ConfigError):
        diffusion_factorize(build_laplacian(random100), -1.0)


def test_round_trip_s3(rng):
    m = icosphere(3)
    sys = diffusion_factorize(build_laplacian(m), 19.0)
    x = rng.normal(size=(m.n_vertices, 3))
    assert np.linalg.norm(sys.solve(sys.apply(x)) - x) / np.linalg.norm(x) < 1e-10
    p = m.positions
    assert np.linalg.norm(to_p(sys, to_u(sys, p)) - p) / np.linalg.norm(p) < 1e-10


def test_constant_fixed_point(sphere2):
    sys = diffusion_factorize(build_laplacian(sphere2), 19.0)
    c = np.tile([0.3, -1.0, 2.0], (sphere2.n_vertices, 1))
    assert np.allclose(sys.apply(c), c, rtol=0, atol=1e-13)
    assert np.allclose(sys.solve(c), c, rtol=0, atol=1e-12)


def test_transpose_solve(sphere2, rng):
    sys = diffusion_factorize(build_laplacian(sphere2), 19.0)
    x = rng.normal(size=(sphere2.n_vertices, 3))
    y = sys.solve_transpose(x)
    assert np.allclose(sys.A.T @ y, x, atol=1e-10)


def test_pullback_fd():
    m = random_sphere_mesh(50, seed=5)
    sys = diffusion_factorize(build_laplacian(m), 19.0)
    u = to_u(sys, m.positions)

    def energy_u(uu):
        return 0.5 * float(np.sum(to_p(sys, uu) ** 2))

    g_fd = central_difference(energy_u, u)
    assert rel_err(pullback_gradient(sys, to_p(sys, u)), g_fd) < 1e-5


def test_pullback_composed_with_bilaplacian():
    m = random_sphere_mesh(40, seed=9, jitter=0.2)
    L = build_laplacian(m)
    sys = diffusion_factorize(L, 5.0)
    u = to_u(sys, m.positions)
    g_fd = central_difference(lambda uu: bilaplacian_energy(L, to_p(sys, uu)), u)
    g = pullback_gradient(sys, bilaplacian_energy_grad(L, to_p(sys, u)))
    assert rel_err(g, g_fd) < 1e-4


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_diffusion_damps_high_frequencies(seed):
    m = icosphere(2)
    L = build_laplacian(m)
    sys = diffusion_factorize(L, 19.0)
    u = np.random.default_rng(seed).normal(size=(m.n_vertices, 3))
    mag_u = np.linalg.norm(L @ u, axis=1)
    mag_p = np.linalg.norm(L @ to_p(sys, u), axis=1)
    assert np.var(mag_p) <= np.var(mag_u)


def test_s4_factorization_fast(rng):
    m = icosphere(4)
    t0 = time.perf_counter()
    sys = diffusion_factorize(build_laplacian(m), 19.0)
    x = rng.normal(size=(m.n_vertices, 3))
    err = np.linalg.norm(sys.solve(sys.apply(x)) - x) / np.linalg.norm(x)
    assert time.perf_counter() - t0 < 5.0
    assert err < 1e-10
