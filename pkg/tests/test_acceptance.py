"""Acceptance suite: one test and one PASS/FAIL summary line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines are
printed in the "acceptance criteria" section at the end of the run.
"""

import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conftest import ACCEPTANCE_LINES
from densadapt.cli import main
from densadapt.density import adaptive_target, adaptation_energy, mean_edge_lengths, uniform_target
from densadapt.evaluation import evaluate
from densadapt.gradcheck import run_gradcheck
from densadapt.landmarks import anchor_weights, read_manifest, weighted_alignment
from densadapt.laplacian import build_laplacian, diffusion_factorize, to_p, to_u
from densadapt.mesh import icosphere
from densadapt.objio import load_obj
from densadapt.optimizer import FitConfig, ScheduleConfig, fit, optimize_adaptation_only, read_metrics_csv, schedule_weights
from densadapt.pipeline import corpus_from_synthetic
from densadapt.synthetic import bumpy_sphere, graded_sphere, spiky_star

# connectivity checks gather every fit/register output produced in this module
FIT_OUTPUTS = []


def report(name, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def test_gradient_suite():
    t0 = time.perf_counter()
    results = run_gradcheck(sizes=(200,), seed=0, h=1e-5, tol=1e-4)
    elapsed = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.max_rel_err)
    names = {r.energy for r in results}
    complete = names == {e + s for e in ("E_a", "laplacian", "bilaplacian", "D_c", "D_n", "landmark") for s in ("", "(u)")}
    ok = complete and all(r.passed for r in results) and elapsed < 60
    report("gradient suite", ok,
           f"{len(results)} checks, worst {worst.energy} rel err {worst.max_rel_err:.2e} < 1e-4, {elapsed:.1f}s < 60s")


def test_diffusion_correctness():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    m = icosphere(4)
    system = diffusion_factorize(build_laplacian(m), 19.0)
    p = m.positions + 0.05 * rng.normal(size=m.positions.shape)
    round_trip = np.linalg.norm(to_p(system, to_u(system, p)) - p) / np.linalg.norm(p)
    elapsed = time.perf_counter() - t0
    c = np.tile([0.3, -1.2, 2.0], (m.n_vertices, 1))
    const_err = max(np.abs(system.apply(c) - c).max(), np.abs(system.solve(c) - c).max())
    ident = diffusion_factorize(build_laplacian(m), 0.0)
    exact_identity = np.array_equal(ident.solve(p), p) and np.array_equal(ident.apply(p), p)
    ok = round_trip < 1e-10 and const_err < 1e-12 and exact_identity and elapsed < 5
    report("diffusion correctness", ok,
           f"round trip {round_trip:.1e} < 1e-10, constant drift {const_err:.1e}, "
           f"lambda=0 exact {exact_identity}, s=4 in {elapsed:.2f}s < 5s")


def test_adaptive_target_bound():
    violations = 0
    worst = -np.inf
    for seed in range(100):
        m = bumpy_sphere(seed=seed, subdivisions=3)
        L = build_laplacian(m)
        l = mean_edge_lengths(m)
        target = adaptive_target(m, L, 1.0).lengths
        worst = max(worst, float(np.max(target - l)))
        violations += int(np.any(target > l))
    report("adaptive target bound", violations == 0,
           f"{violations}/100 bumpy spheres with l'_k > l, max(l'_k - l) = {worst:.1e}")


def test_density_uniformization():
    m = graded_sphere(seed=0)
    target = uniform_target(m)
    out = optimize_adaptation_only(m, target, FitConfig(), iterations=500)
    cv = [x.edge_lengths().std() / x.edge_lengths().mean() for x in (m, out)]
    ea = [adaptation_energy(m, target), adaptation_energy(out, target)]
    cv_drop, ea_drop = 1 - cv[1] / cv[0], 1 - ea[1] / ea[0]
    FIT_OUTPUTS.append((m, out))
    report("density uniformization", cv_drop >= 0.5 and ea_drop >= 0.9,
           f"edge CV {cv[0]:.3f} -> {cv[1]:.3f} ({cv_drop:.1%} >= 50%), E_a down {ea_drop:.2%} >= 90%")


@pytest.fixture(scope="module")
def paired_runs():
    template, target = icosphere(4), spiky_star(5, height=0.5, sigma=0.15)
    runs = {}
    for m in (0.0, 1.5):
        t0 = time.perf_counter()
        res = fit(template, target, FitConfig(lam=19.0, m=m, iterations=1400, threads=1))
        runs[m] = (res, time.perf_counter() - t0, evaluate(res.mesh, target, samples=100_000, seed=0))
        FIT_OUTPUTS.append((template, res.mesh))
    return runs


def test_paired_adaptation_benefit(paired_runs):
    (_, t_dr, e_dr), (_, t_ours, e_ours) = paired_runs[0.0], paired_runs[1.5]
    ratio = e_ours.chamfer / e_dr.chamfer
    ok = ratio <= 0.97 and e_ours.normal_mse < e_dr.normal_mse and max(t_dr, t_ours) < 300
    report("paired adaptation benefit", ok,
           f"Chamfer m=1.5 {e_ours.chamfer:.4e} vs m=0 {e_dr.chamfer:.4e} (ratio {ratio:.3f} <= 0.97); "
           f"normal MSE {e_ours.normal_mse:.4e} < {e_dr.normal_mse:.4e}; runs {t_ours:.0f}s/{t_dr:.0f}s < 300s")


def test_schedule_conformance():
    cfg = ScheduleConfig(1.5, 1400)
    w = [schedule_weights(t, cfg) for t in range(1400)]
    ok = (all(x == (1.5, 0.0) for x in w[:350]) and all(x == (0.0, 3.0) for x in w[350:700])
          and all(x == (0.0, 0.0) for x in w[700:]))
    report("schedule conformance", ok, "(1.5,0) on [0,350), (0,3.0) on [350,700), (0,0) on [700,1400)")


def test_rotation_recovery():
    rng = np.random.default_rng(2024)
    rots = Rotation.random(1000, random_state=7).as_matrix()
    w = anchor_weights()
    worst, bad_det = 0.0, 0
    for r0 in rots:
        ref = rng.normal(size=(38, 3))
        rot = weighted_alignment(ref @ r0.T, ref, w)
        worst = max(worst, np.linalg.norm(rot - r0.T))
        bad_det += abs(np.linalg.det(rot) - 1.0) > 1e-12
    # reflection-inducing fixtures: mirrored, noisy and nearly planar sets
    fixtures = 0
    for k in range(200):
        ref = rng.normal(size=(38, 3))
        moving = ref * [1, 1, -1] + rng.normal(scale=0.1, size=ref.shape)
        if k % 2:
            moving[:, 2] *= 1e-3
        rot = weighted_alignment(moving, ref, w)
        fixtures += 1
        bad_det += abs(np.linalg.det(rot) - 1.0) > 1e-12
    report("rotation recovery", worst < 1e-10 and bad_det == 0,
           f"1000 rotations, max Frobenius error {worst:.1e} < 1e-10; det=+1 in all "
           f"{1000 + fixtures} cases ({bad_det} failures)")


@pytest.fixture(scope="module")
def registration(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_register")
    manifest = corpus_from_synthetic(str(root / "corpus"), seeds=(0, 1), subdivisions=4)
    out = root / "out"
    rc = main(["register", "--manifest", manifest, "--out", str(out), "--template-subdivisions", "3",
               "--iters", "400", "--threads", "1"])
    return rc, manifest, out


def test_register_end_to_end(registration):
    rc, manifest, out = registration
    fitted = [load_obj(e[2]) for e in read_manifest(manifest)]
    template = icosphere(3)
    for f in fitted:
        FIT_OUTPUTS.append((template, f))
    stage_files = [out / f"stage{s}_face{k}.obj" for s in (1, 3) for k in (0, 1)]
    ratios = []
    for k in (0, 1):
        trace = read_metrics_csv(out / f"stage3_face{k}_metrics.csv")
        ratios.append(trace[-1]["E_lmk"] / trace[0]["E_lmk"])
    shared = all(np.array_equal(f.faces, fitted[0].faces) for f in fitted)
    ok = (rc == 0 and all(p.exists() for p in stage_files) and (out / "template_landmarks.txt").exists()
          and shared and max(ratios) < 0.1)
    report("register end to end", ok,
           f"exit {rc}, 3 stages written, shared faces {shared}, "
           f"stage-3 landmark loss final/initial {', '.join(f'{r:.3f}' for r in ratios)} < 0.10")


def test_connectivity_preserved(paired_runs, registration):
    # runs last: the paired and register fixtures have filled FIT_OUTPUTS
    checked = len(FIT_OUTPUTS)
    same = all(
        out.n_vertices == ref.n_vertices and np.array_equal(out.faces, ref.faces) for ref, out in FIT_OUTPUTS
    )
    report("connectivity preservation", same and checked >= 4,
           f"{checked} fit/register outputs keep the template face array and vertex count")
