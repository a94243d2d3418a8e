"""Deterministic synthetic targets standing in for scanned datasets.

All shapes are star-shaped radial deformations of a subdivided icosahedron,
``x = r(d) * d`` for unit directions ``d``. Randomness, where a shape has
any, comes from ``numpy.random.default_rng(seed)``.
"""

import numpy as np

from .data_terms import build_index
from .errors import ConfigError
from .landmarks import DEFAULT_ANCHOR_INDEX, DEFAULT_LANDMARK_COUNT, LandmarkSet
from .mesh import icosphere

KINDS = ("sphere", "spiky_star", "bumpy_sphere", "graded_sphere", "face_blob")

AXES = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.float64
)


def _angle(d, axis):
    return np.arccos(np.clip(d @ axis, -1.0, 1.0))


def _radial(subdivisions, radius_fn, radius=1.0):
    base = icosphere(subdivisions)
    d = base.positions
    return base.with_positions(radius * radius_fn(d)[:, None] * d)


def sphere(subdivisions=4, radius=1.0):
    return icosphere(subdivisions, radius)


def graded_sphere(seed=0, subdivisions=3, bias=1.0, jitter=0.2):
    """Unit icosphere whose vertices crowd towards the +z pole.

    The polar coordinate is warped by ``z' = 1 - 2((1 - z)/2)^(1 + bias)``,
    so edges shrink near +z and grow near -z while the connectivity stays
    regular. ``jitter`` adds a seeded perturbation (as a fraction of 0.05)
    before projecting back onto the sphere.
    """
    if bias < 0:
        raise ConfigError(f"bias must be non-negative, got {bias}")
    base = icosphere(subdivisions)
    p = base.positions
    s = ((1.0 - p[:, 2]) / 2.0) ** (1.0 + bias)
    z = 1.0 - 2.0 * s
    rho = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = np.arctan2(p[:, 1], p[:, 0])
    q = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], 1)
    if jitter:
        rng = np.random.default_rng(seed)
        q = q + 0.05 * jitter * rng.normal(size=q.shape)
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return base.with_positions(q)


def spiky_star(subdivisions=5, height=0.5, sigma=0.15, radius=1.0):
    """Sphere with six axis-aligned Gaussian radial bumps.

    ``height`` is relative to ``radius``; ``sigma`` is the bump width as a
    geodesic angle in radians.
    """
    def r(d):
        bumps = sum(np.exp(-_angle(d, a) ** 2 / (2.0 * sigma**2)) for a in AXES)
        return 1.0 + height * bumps

    return _radial(subdivisions, r, radius)


def bumpy_sphere(seed=0, subdivisions=3, amplitude=None, frequency=None, jitter=0.0):
    """Sphere modulated by a cosine in the polar angle about a random axis.

    Unset parameters are drawn from the seed: amplitude in [0.05, 0.15] and
    integer frequency in [4, 8]. ``jitter`` perturbs vertices tangentially by
    that fraction of the mean edge length.
    """
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    amp = rng.uniform(0.05, 0.15) if amplitude is None else amplitude
    freq = rng.integers(4, 9) if frequency is None else frequency
    phase = rng.uniform(0.0, 2.0 * np.pi)

    mesh = _radial(subdivisions, lambda d: 1.0 + amp * np.cos(freq * _angle(d, axis) + phase))
    if jitter:
        from .density import average_edge_length

        h = jitter * average_edge_length(mesh)
        mesh = mesh.with_positions(mesh.positions + h * rng.uniform(-1.0, 1.0, size=mesh.positions.shape))
    mesh.bump_params = {"axis": axis, "amplitude": amp, "frequency": int(freq), "phase": phase}
    return mesh


def _landmark_directions(count=DEFAULT_LANDMARK_COUNT, anchor=DEFAULT_ANCHOR_INDEX, cap_deg=70.0):
    """Fixed front-facing (+z) directions; ``anchor`` points straight ahead."""
    k = np.arange(count - 1) + 0.5
    cos_cap = np.cos(np.radians(cap_deg))
    z = 1.0 - (1.0 - cos_cap) * k / (count - 1)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phi = golden * np.arange(count - 1)
    rho = np.sqrt(1.0 - z * z)
    ring = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], 1)
    dirs = np.insert(ring, anchor, [0.0, 0.0, 1.0], axis=0)
    return dirs


def _rotation(rng, max_angle):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def face_blob(seed=0, subdivisions=5, landmark_count=DEFAULT_LANDMARK_COUNT, max_tilt_deg=5.0):
    """Smooth asymmetric face-like blob with procedurally placed landmarks.

    The blob is an ellipsoid with a nose bump along +z, two eye dents and a
    mouth ridge, plus low-frequency random modulation. Landmarks follow
    fixed directions, so landmark ``i`` means the same thing on every blob;
    they are projected onto the mesh surface. Returns ``(mesh, LandmarkSet)``.
    """
    rng = np.random.default_rng(seed)
    scale = np.array([0.85, 1.05, 0.9]) * (1.0 + rng.uniform(-0.05, 0.05, size=3))
    nose_h = 0.3 + rng.uniform(-0.08, 0.08)
    eyes = [np.array([s * 0.38, 0.28, 0.88]) for s in (-1.0, 1.0)]
    eyes = [e / np.linalg.norm(e) for e in eyes]
    mouth = np.array([0.0, -0.42, 0.9])
    mouth /= np.linalg.norm(mouth)
    coeff = rng.normal(scale=0.03, size=(4, 3))
    freq = np.array([1.0, 2.0, 2.0, 3.0])
    nose = np.array([0.0, 0.0, 1.0])

    def r(d):
        out = 1.0 + nose_h * np.exp(-_angle(d, nose) ** 2 / (2 * 0.16**2))
        for e in eyes:
            out -= 0.08 * np.exp(-_angle(d, e) ** 2 / (2 * 0.12**2))
        out += 0.06 * np.exp(-_angle(d, mouth) ** 2 / (2 * 0.1**2))
        for c, f in zip(coeff, freq):
            out += c[0] * np.sin(f * d[:, 0] + c[1]) * np.cos(f * d[:, 1] + c[2])
        return out

    base = icosphere(subdivisions)
    d = base.positions
    pos = (r(d) * 1.0)[:, None] * d * scale
    rot = _rotation(rng, np.radians(max_tilt_deg))
    mesh = base.with_positions(pos @ rot.T)

    dirs = _landmark_directions(landmark_count)
    lm_raw = ((r(dirs))[:, None] * dirs * scale) @ rot.T
    pts, _, _ = build_index(mesh).query(lm_raw)
    return mesh, LandmarkSet(pts)


def make_synthetic(kind, seed=0, **params):
    """Build a synthetic shape by name.

    ``face_blob`` returns ``(mesh, LandmarkSet)``; other kinds return
    ``(mesh, None)``.
    """
    if kind == "sphere":
        return sphere(**params), None
    if kind == "spiky_star":
        return spiky_star(**params), None
    if kind == "bumpy_sphere":
        return bumpy_sphere(seed=seed, **params), None
    if kind == "graded_sphere":
        return graded_sphere(seed=seed, **params), None
    if kind == "face_blob":
        return face_blob(seed=seed, **params)
    raise ConfigError(f"unknown synthetic kind {kind!r}; expected one of {KINDS}")
