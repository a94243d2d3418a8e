"""First-order fitting in diffusion coordinates with scheduled density adaptation.

The optimized variable is ``u = (I + lam L) p``. Every iteration maps ``u``
back to positions, refreshes closest-point correspondences, rebuilds the
uniform and adaptive edge-length targets from the current shape, sums the
term gradients in position space, pulls them back to ``u`` and takes one
uniform-denominator Adam step.
"""

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import data_terms, density
from .errors import ConfigError, NumericalError
from .laplacian import (
    DiffusionSystem,
    bilaplacian_energy,
    bilaplacian_energy_grad,
    build_laplacian,
    laplacian_energy,
    laplacian_energy_grad,
)

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "iter", "E_d", "D_c", "D_n", "E_a_u", "E_a_k", "E_lmk",
    "w_u", "w_k", "edge_len_mean", "edge_len_cv", "wall_ms",
)
BASELINE_MODES = ("none", "laplacian", "bilaplacian")


@dataclass
class ScheduleConfig:
    m: float = 1.5
    T: int = 1400

    def __post_init__(self):
        if not (np.isfinite(self.m) and self.m >= 0):
            raise ConfigError(f"adaptation strength m must be finite and >= 0, got {self.m}")
        if int(self.T) != self.T or self.T < 4:
            raise ConfigError(f"total iterations T must be an integer >= 4, got {self.T}")


def schedule_weights(t, cfg):
    """``(w_u, w_k)`` at iteration ``t``: uniform phase, adaptive phase, then off.

    ``w_u = m`` on ``t/T < 1/4``; ``w_k = 2m`` on ``1/4 <= t/T < 1/2``.
    Integer comparisons keep the breakpoints exact.
    """
    if not 0 <= t < cfg.T:
        raise ConfigError(f"iteration {t} outside [0, {cfg.T})")
    if 4 * t < cfg.T:
        return float(cfg.m), 0.0
    if 2 * t < cfg.T:
        return 0.0, 2.0 * float(cfg.m)
    return 0.0, 0.0


@dataclass
class OptimizerState:
    """Moments and iterate of the (uniform) Adam update."""

    u: np.ndarray
    step_size: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    uniform: bool = True
    m1: np.ndarray = None
    m2: object = None
    t: int = 0

    def __post_init__(self):
        self.u = np.array(self.u, dtype=np.float64)
        if self.m1 is None:
            self.m1 = np.zeros_like(self.u)
        if self.m2 is None:
            self.m2 = 0.0 if self.uniform else np.zeros_like(self.u)


def uniform_step(state, grad_u):
    """Adam step whose second moment is one scalar shared by all coordinates.

    The scalar tracks the squared largest gradient entry, so the step keeps
    the relative magnitudes of the gradient instead of normalizing each
    coordinate separately. ``state.uniform = False`` gives standard Adam.
    """
    g = np.asarray(grad_u, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite gradient at optimizer step {state.t}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m1 = b1 * state.m1 + (1.0 - b1) * g
    if state.uniform:
        gmax = float(np.max(np.abs(g))) if g.size else 0.0
        state.m2 = b2 * state.m2 + (1.0 - b2) * gmax * gmax
    else:
        state.m2 = b2 * state.m2 + (1.0 - b2) * g * g
    m1_hat = state.m1 / (1.0 - b1 ** state.t)
    m2_hat = state.m2 / (1.0 - b2 ** state.t)
    state.u = state.u - state.step_size * m1_hat / (np.sqrt(m2_hat) + state.epsilon)
    return state


@dataclass
class FitConfig:
    """Parameters of a template fit.

    ``baseline`` adds a Laplacian or bi-Laplacian smoothness energy with
    weight ``baseline_weight``; ``lam = 0`` then gives plain position-space
    optimization as in classic regularized fitting.
    """

    lam: float = 19.0
    step_size: float = 1e-2
    iterations: int = 1400
    m: float = 1.5
    lambda_s: float = 1.0
    use_landmarks: bool = False
    landmark_weight: float = 1.0
    baseline: str = "none"
    baseline_weight: float = 0.0
    optimizer: str = "uniform"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    threads: int = 1

    def __post_init__(self):
        for name in ("lam", "step_size", "m", "lambda_s", "landmark_weight", "baseline_weight", "epsilon"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v!r}")
        if self.baseline not in BASELINE_MODES:
            raise ConfigError(f"baseline must be one of {BASELINE_MODES}, got {self.baseline!r}")
        if self.optimizer not in ("uniform", "adam"):
            raise ConfigError(f"optimizer must be 'uniform' or 'adam', got {self.optimizer!r}")
        ScheduleConfig(self.m, self.iterations)

    @property
    def schedule(self):
        return ScheduleConfig(self.m, self.iterations)

    def to_dict(self):
        return asdict(self)


@dataclass
class FitResult:
    mesh: object
    trace: list
    config: FitConfig
    corr: object = None


class TermEvaluator:
    """Values and position-space gradients of every objective term.

    Holds the prefactored smoothing system for adaptive targets and the
    target surface index; both depend only on fixed connectivity.
    """

    def __init__(self, template, cfg, target=None, index=None, L=None):
        self.template = template
        self.cfg = cfg
        self.L = build_laplacian(template) if L is None else L
        self.smoother = DiffusionSystem(self.L, cfg.lambda_s)
        if index is None and target is not None:
            index = data_terms.build_index(target, workers=cfg.threads)
        self.index = index

    def evaluate(self, p, landmarks=None, need=("data", "uniform", "adaptive", "landmark", "baseline")):
        mesh = self.template.with_positions(p)
        vals, grads = {}, {}
        corr = None
        if "data" in need and self.index is not None:
            corr = data_terms.closest_points(self.index, p)
            vals["D_c"], grads["D_c"] = data_terms.chamfer_loss(p, corr)
            vals["D_n"], grads["D_n"] = data_terms.normal_loss(mesh, corr)
        if "uniform" in need:
            tgt = density.uniform_target(mesh)
            vals["E_a_u"] = density.adaptation_energy(mesh, tgt)
            grads["E_a_u"] = density.adaptation_gradient(mesh, tgt)
        if "adaptive" in need:
            tgt = density.adaptive_target(mesh, self.L, self.cfg.lambda_s, system=self.smoother)
            vals["E_a_k"] = density.adaptation_energy(mesh, tgt)
            grads["E_a_k"] = density.adaptation_gradient(mesh, tgt)
        if "landmark" in need and landmarks is not None:
            idx, pts = landmarks
            vals["E_lmk"], grads["E_lmk"] = data_terms.landmark_loss(p, idx, pts)
        if "baseline" in need and self.cfg.baseline != "none":
            if self.cfg.baseline == "laplacian":
                vals["E_s"], grads["E_s"] = laplacian_energy(self.L, p), laplacian_energy_grad(self.L, p)
            else:
                vals["E_s"], grads["E_s"] = bilaplacian_energy(self.L, p), bilaplacian_energy_grad(self.L, p)
        return vals, grads, corr


def assemble_gradient(grads, weights):
    """Weighted sum of term gradients; terms missing from ``weights`` are skipped."""
    total = None
    for name, w in weights.items():
        if name not in grads or w == 0.0:
            continue
        contrib = w * grads[name]
        total = contrib if total is None else total + contrib
    if total is None:
        total = np.zeros_like(next(iter(grads.values())))
    return total


def _edge_stats(mesh):
    lengths = mesh.edge_lengths()
    mean = float(lengths.mean())
    return mean, float(lengths.std() / mean) if mean > 0 else 0.0


def _make_state(u, cfg):
    return OptimizerState(
        u, step_size=cfg.step_size, beta1=cfg.beta1, beta2=cfg.beta2,
        epsilon=cfg.epsilon, uniform=cfg.optimizer == "uniform",
    )


def fit(template, target, cfg=None, template_landmarks=None, target_landmarks=None, callback=None, index=None):
    """Deform ``template`` onto ``target`` without changing its connectivity.

    Parameters
    ----------
    template, target : TriMesh
    cfg : FitConfig
    template_landmarks : array_like of int, optional
        Template vertex indices; required when ``cfg.use_landmarks``.
    target_landmarks : array_like, shape (B, 3), optional
        Target landmark positions paired with ``template_landmarks``.
    callback : callable, optional
        Called as ``callback(t, positions)`` before each step.
    index : SurfaceIndex, optional
        Prebuilt index for ``target``.

    Returns
    -------
    FitResult
        Fitted mesh (template faces, new positions) and one metrics row per
        iteration.
    """
    cfg = FitConfig() if cfg is None else cfg
    landmarks = None
    if cfg.use_landmarks:
        if template_landmarks is None or target_landmarks is None:
            raise ConfigError("use_landmarks requires template and target landmarks")
        idx = np.asarray(template_landmarks, dtype=np.int64).reshape(-1)
        pts = np.asarray(target_landmarks, dtype=np.float64).reshape(-1, 3)
        if len(idx) != len(pts):
            raise ConfigError(f"template has {len(idx)} landmarks but target has {len(pts)}")
        if idx.size == 0 or idx.min() < 0 or idx.max() >= template.n_vertices:
            raise ConfigError("template landmark index out of range")
        landmarks = (idx, pts)

    faces_before = template.faces.copy()
    sched = cfg.schedule
    evaluator = TermEvaluator(template, cfg, target=target, index=index)
    system = DiffusionSystem(evaluator.L, cfg.lam)
    state = _make_state(system.apply(template.positions), cfg)

    trace = []
    corr = None
    for t in range(cfg.iterations):
        t0 = time.perf_counter()
        p = system.solve(state.u)
        if callback is not None:
            callback(t, p)
        w_u, w_k = schedule_weights(t, sched)
        vals, grads, corr = evaluator.evaluate(p, landmarks)
        weights = {"D_c": 1.0, "D_n": 1.0, "E_a_u": w_u, "E_a_k": w_k}
        if landmarks is not None:
            weights["E_lmk"] = cfg.landmark_weight
        if cfg.baseline != "none":
            weights["E_s"] = cfg.baseline_weight
        g_p = assemble_gradient(grads, weights)
        row = _metrics_row(t, template, p, vals, w_u, w_k)
        if not np.all(np.isfinite(g_p)) or not all(np.isfinite(v) for v in vals.values()):
            raise NumericalError(f"non-finite energy or gradient at iteration {t}: {_fmt(vals)}")
        uniform_step(state, system.solve_transpose(g_p))
        row["wall_ms"] = 1e3 * (time.perf_counter() - t0)
        trace.append(row)
        if t % 100 == 0:
            logger.debug("iter %d %s", t, _fmt(vals))

    fitted = template.with_positions(system.solve(state.u))
    if not np.array_equal(fitted.faces, faces_before) or fitted.n_vertices != template.n_vertices:
        raise AssertionError("connectivity changed during fit")
    return FitResult(fitted, trace, cfg, corr)


def optimize_adaptation_only(mesh, target_lengths, cfg=None, iterations=None, return_trace=False):
    """Minimize the adaptation energy alone through the diffusion parameterization.

    ``target_lengths`` is an :class:`~densadapt.density.EdgeLengthTarget` or
    an array of N lengths, held fixed for the whole run.
    """
    cfg = FitConfig() if cfg is None else cfg
    n_iter = cfg.iterations if iterations is None else int(iterations)
    lengths = np.asarray(getattr(target_lengths, "lengths", target_lengths), dtype=np.float64)
    if lengths.shape != (mesh.n_vertices,):
        raise ConfigError(f"expected {mesh.n_vertices} target lengths, got {lengths.shape}")
    if np.any(~np.isfinite(lengths)) or np.any(lengths < 0):
        raise ConfigError("target lengths must be finite and non-negative")
    system = DiffusionSystem(build_laplacian(mesh), cfg.lam)
    state = _make_state(system.apply(mesh.positions), cfg)
    trace = []
    for t in range(n_iter):
        p = system.solve(state.u)
        energy = density.adaptation_energy(mesh, lengths, positions=p)
        g = density.adaptation_gradient(mesh, lengths, positions=p)
        if not np.isfinite(energy):
            raise NumericalError(f"non-finite adaptation energy at iteration {t}")
        trace.append(energy)
        uniform_step(state, system.solve_transpose(g))
    out = mesh.with_positions(system.solve(state.u))
    if return_trace:
        trace.append(density.adaptation_energy(out, lengths))
        return out, trace
    return out


def _metrics_row(t, template, p, vals, w_u, w_k):
    mean, cv = _edge_stats(template.with_positions(p))
    d_c = vals.get("D_c", float("nan"))
    d_n = vals.get("D_n", float("nan"))
    return {
        "iter": t,
        "E_d": d_c + d_n,
        "D_c": d_c,
        "D_n": d_n,
        "E_a_u": vals.get("E_a_u", float("nan")),
        "E_a_k": vals.get("E_a_k", float("nan")),
        "E_lmk": vals.get("E_lmk", float("nan")),
        "w_u": w_u,
        "w_k": w_k,
        "edge_len_mean": mean,
        "edge_len_cv": cv,
        "wall_ms": 0.0,
    }


def _fmt(vals):
    return ", ".join(f"{k}={v:.6g}" for k, v in vals.items())


def write_metrics_csv(trace, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in trace:
            writer.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in METRIC_COLUMNS})


def read_metrics_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "iter" else float(v)) for k, v in row.items()} for row in rows]
