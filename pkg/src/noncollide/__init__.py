"""Splitting scheme and baselines for non-colliding interacting particle systems."""

__version__ = "0.1.0"

from .brownian import BrownianGrid, coarsen, generate
from .coeffs import compute_c, freeze, positions_from_gaps, project_noise
from .harness import collision_stats, dyson_moment_check, local_error_scaling, strong_error
from .integrators import SchemeKind, Trajectory, run_em, run_sd, run_tamed, sd_step, sd_transform
from .model import DriftSpec, SystemSpec, drift_eval, dyson, load_spec, validate

__all__ = [
    "BrownianGrid",
    "DriftSpec",
    "SchemeKind",
    "SystemSpec",
    "Trajectory",
    "coarsen",
    "collision_stats",
    "compute_c",
    "drift_eval",
    "dyson",
    "dyson_moment_check",
    "freeze",
    "generate",
    "load_spec",
    "local_error_scaling",
    "positions_from_gaps",
    "project_noise",
    "run_em",
    "run_sd",
    "run_tamed",
    "sd_step",
    "sd_transform",
    "strong_error",
    "validate",
]
