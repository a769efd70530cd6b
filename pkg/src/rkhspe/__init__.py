"""Kernel-based adaptive estimation of unknown dynamics along limit cycles.

Submodules:

- ``kernel_core``: Matern kernel, Gram matrices, finite-span functions, projection.
- ``manifold_geom``: trajectories, polyline loops, geodesic distance, period detection.
- ``pe_analysis``: persistence-of-excitation certificates and error bounds.
- ``adaptive_estimator``: coupled plant/estimator integration.
- ``experiment``: configuration files and end-to-end pipelines.
"""
__version__ = "0.1.0"

from .errors import AnalysisError, DomainError, InputError, NumericError, RkhsPeError
from .kernel_core import (CenterSet, GramMatrix, KernelSpec, RkhsFunction, eval_kernel, gram,
                          project, rkhs_norm)
from .manifold_geom import ManifoldModel, Trajectory, detect_period, extract_limit_cycle
from .pe_analysis import (PeCertificate, PeConfig, check_sufficient_condition, select_epsilon,
                          ultimate_bounds)
from .adaptive_estimator import EstimatorConfig, PlantModel, SimResult, simulate

__all__ = [
    "AnalysisError", "CenterSet", "DomainError", "EstimatorConfig", "GramMatrix", "InputError",
    "KernelSpec", "ManifoldModel", "NumericError", "PeCertificate", "PeConfig", "PlantModel",
    "RkhsFunction", "RkhsPeError", "SimResult", "Trajectory", "check_sufficient_condition",
    "detect_period", "eval_kernel", "extract_limit_cycle", "gram", "project", "rkhs_norm",
    "select_epsilon", "simulate", "ultimate_bounds",
]
