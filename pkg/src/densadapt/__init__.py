"""Template mesh fitting with curvature-driven vertex density adaptation.

The template keeps its connectivity throughout; vertices are redistributed
by matching per-vertex mean edge lengths to uniform or curvature-scaled
targets while the shape is fitted in a diffusion-smoothed parameterization.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateConfigurationError,
    DensAdaptError,
    MalformedMeshError,
    MeshIOError,
    NumericalError,
    SolverError,
)
from .mesh import TriMesh, build_mesh, icosphere, random_sphere_mesh, vertex_normals
from .objio import load_obj, save_obj
from .laplacian import DiffusionSystem, build_laplacian
from .density import adaptive_target, mean_edge_lengths, uniform_target
from .data_terms import build_index, closest_points
from .optimizer import FitConfig, fit, optimize_adaptation_only, schedule_weights
from .landmarks import LandmarkSet, resample_landmarks, weighted_alignment
from .evaluation import evaluate
from .synthetic import make_synthetic

__all__ = [
    "ConfigError", "DegenerateConfigurationError", "DensAdaptError", "MalformedMeshError",
    "MeshIOError", "NumericalError", "SolverError", "TriMesh", "build_mesh", "icosphere",
    "random_sphere_mesh", "vertex_normals", "load_obj", "save_obj", "DiffusionSystem",
    "build_laplacian", "adaptive_target", "mean_edge_lengths", "uniform_target", "build_index",
    "closest_points", "FitConfig", "fit", "optimize_adaptation_only", "schedule_weights",
    "LandmarkSet", "resample_landmarks", "weighted_alignment", "evaluate", "make_synthetic",
]
