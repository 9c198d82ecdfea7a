"""Variable-order subdiffusion: Laplace-domain forward solver, small-frequency
asymptotics and order recovery from boundary flux data."""

from ._jit import backend
from .errors import AssumptionViolation, ConfigError, SolverError
from .geometry import (Excitation, Mesh, OrderField, Partition, ScalarField, boundary_point_index,
                       build_disk_mesh, build_partition_order, build_square_mesh, tag_rings_sectors)
from .elliptic import assemble, solve_dirichlet, variational_flux
from .forward import (CoefficientSet, FluxCurve, WeightedData, boundary_flux, flux_curve, log_grid,
                      weighted_data)
from .asymptotics import cascade_one, cascade_zero, choose_p0, remainder_probe_one, remainder_probe_zero
from .inverse import (detect_leading_M, distinguishability_experiment, figure1_orders, linearized_recovery,
                      recover_exponents, reciprocity_check, stability_report)
from .timedomain import l1_step_solve, laplace_at, weighted_time_integral

__version__ = "0.1.0"

__all__ = [
    "backend", "AssumptionViolation", "ConfigError", "SolverError",
    "Excitation", "Mesh", "OrderField", "Partition", "ScalarField", "boundary_point_index", "build_disk_mesh",
    "build_partition_order", "build_square_mesh", "tag_rings_sectors",
    "assemble", "solve_dirichlet", "variational_flux",
    "CoefficientSet", "FluxCurve", "WeightedData", "boundary_flux", "flux_curve", "log_grid", "weighted_data",
    "cascade_one", "cascade_zero", "choose_p0", "remainder_probe_one", "remainder_probe_zero",
    "detect_leading_M", "distinguishability_experiment", "figure1_orders", "linearized_recovery",
    "recover_exponents", "reciprocity_check", "stability_report",
    "l1_step_solve", "laplace_at", "weighted_time_integral",
]
