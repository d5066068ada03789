"""Simulation-free nonlinear moment matching for model order reduction.

Builds projection bases for nonlinear state-space models by solving one
algebraic equation per (signal generator, collocation time) pair, with
rational Krylov, POD and Galerkin tooling for comparison.
"""

from .core import NlmmOptions, NlmmReport, newton_solve, nlmm_basis, solve_column
from .fhn import FhnParams, build_fhn, paper_generator, relative_l1_error, test_input
from .galerkin import ReducedNonlinearSystem, lift, project, reduce_nonlinear
from .integrate import (Trajectory, implicit_euler, integrate_generator, simulate,
                        simulation_counts, steady_state_match_check)
from .linalg import RankWarning, orthonormality_error, projector_distance, svd_deflate
from .linear import (ShiftSpec, check_moment_matching, krylov_basis, moments,
                     output_krylov_basis, read_matrix, reduce_linear, sylvester_residual,
                     write_matrix)
from .pod import pod_basis, snapshot_matrix
from .systems import (CollocationGrid, LinearGenerator, LinearSystem, Method, NonlinearGenerator,
                      NonlinearSystem, ReducedBasis, ZeroGenerator)

__all__ = [
    "NlmmOptions", "NlmmReport", "newton_solve", "nlmm_basis", "solve_column", "FhnParams",
    "build_fhn", "paper_generator", "relative_l1_error", "test_input", "ReducedNonlinearSystem",
    "lift", "project", "reduce_nonlinear", "Trajectory", "implicit_euler",
    "integrate_generator", "simulate", "simulation_counts", "steady_state_match_check",
    "RankWarning", "orthonormality_error", "projector_distance", "svd_deflate", "ShiftSpec",
    "check_moment_matching", "krylov_basis", "moments", "output_krylov_basis", "read_matrix",
    "reduce_linear", "sylvester_residual", "write_matrix", "pod_basis", "snapshot_matrix",
    "CollocationGrid", "LinearGenerator", "LinearSystem", "Method", "NonlinearGenerator",
    "NonlinearSystem", "ReducedBasis", "ZeroGenerator",
]

__version__ = "0.1.0"
