"""Geodesics in a weighted environment and optimal transport with geodesic costs."""
from .errors import (ConfigError, GeodesicOTError, KernelDomainError, KernelPositivityError,
                     KernelSyntaxError, NewtonConvergenceError, UnsolvedEntryError)
from .kernel_expr import KernelExpr, HomotopyKernel, parse_kernel, print_kernel
from .geodesic_bvp import GeodesicProblem, Trajectory, solve_bvp, solve_geodesic
from .optimality import OptimalityReport, conjugate_point_scan, verify_minimizer
from .transport import (CostMatrix, DiscreteMeasure, TransportPlan, build_cost_matrix,
                        path_cost, sinkhorn, solve_assignment)
from .config import ProblemSpec, load_problem, preset
from .pipeline import ReportBundle, export_outputs, run_pipeline

__all__ = [
    "ConfigError", "GeodesicOTError", "KernelDomainError", "KernelPositivityError",
    "KernelSyntaxError", "NewtonConvergenceError", "UnsolvedEntryError",
    "KernelExpr", "HomotopyKernel", "parse_kernel", "print_kernel",
    "GeodesicProblem", "Trajectory", "solve_bvp", "solve_geodesic",
    "OptimalityReport", "conjugate_point_scan", "verify_minimizer",
    "CostMatrix", "DiscreteMeasure", "TransportPlan", "build_cost_matrix", "path_cost",
    "sinkhorn", "solve_assignment",
    "ProblemSpec", "load_problem", "preset",
    "ReportBundle", "export_outputs", "run_pipeline",
]
__version__ = "0.1.0"
