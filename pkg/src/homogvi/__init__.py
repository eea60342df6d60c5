"""Reiterated homogenization of elliptic obstacle problems.

The package solves the oscillating problem

    find u_eps >= psi_eps minimising 1/2 int A(x, x/eps, x/eps^2) grad u . grad u - f u

with P1 finite elements, computes the micro and meso correctors and the
homogenized tensor A*, solves the limit obstacle problem and measures how
fast u_eps approaches it.
"""

from .cell import HomogenizedTensor, homogenized_tensor, solve_cell, solve_meso, solve_micro
from .coefficients import CoefficientSpec, ObstacleSpec
from .errors import (BudgetError, ConfigError, ExprError, HomogviError, MeanValueError,
                     MeshError, ResolutionError, SolverError, ValidationError)
from .expr import evaluate, parse
from .meanvalue import AlgebraSpec, mean_value, partial_mean_y, partial_mean_z
from .mesh import Mesh, PeriodicMesh, build_cell_mesh, build_macro_mesh
from .pipeline import (StudyConfig, StudyReport, build_homogenized_field, convergence_study,
                       multiscale_check, solve_epsilon_vi, solve_homogenized_vi)
from .vi import KKTReport, VISolution, kkt_report, solve_pdas, solve_psor, solve_vi

__version__ = "0.1.0"

__all__ = [
    "AlgebraSpec", "BudgetError", "CoefficientSpec", "ConfigError", "ExprError",
    "HomogenizedTensor", "HomogviError", "KKTReport", "MeanValueError", "Mesh", "MeshError",
    "ObstacleSpec", "PeriodicMesh", "ResolutionError", "SolverError", "StudyConfig",
    "StudyReport", "VISolution", "ValidationError", "build_cell_mesh",
    "build_homogenized_field", "build_macro_mesh", "convergence_study", "evaluate",
    "homogenized_tensor", "kkt_report", "mean_value", "multiscale_check", "parse",
    "partial_mean_y", "partial_mean_z", "solve_cell", "solve_epsilon_vi",
    "solve_homogenized_vi", "solve_meso", "solve_micro", "solve_pdas", "solve_psor",
    "solve_vi",
]
