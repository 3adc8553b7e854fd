"""Finite element field reconstruction for transient heat conduction.

Forward solves on structured hexahedral meshes, per-step reconstruction of the
full temperature field from sparse measurements, and generation of several
fields that share a prescribed total-heat history.
"""
from ._kernels import BACKEND
from .assembly import AssembledSystem, MaterialProperties, assemble_flux_load, assemble_global
from .exceptions import (ConfigError, FieldReconError, NumericalError, RankDeficiencyError,
                         SingularSystemError, SolverBreakdown)
from .forward import (MeasurementSeries, TransientSolution, run_forward, sample_measurements,
                      steady_solve, transient_step)
from .inverse import (LossWeights, ReconstructionConfig, error_metrics, reconstruct_series,
                      reconstruct_step)
from .mesh import BoundarySets, Mesh, build_box_mesh, classify_boundary, nearest_node
from .multichoice import GenerationConfig, HeatGoal, generate_option, generate_options

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AssembledSystem", "MaterialProperties", "assemble_flux_load", "assemble_global",
    "ConfigError", "FieldReconError", "NumericalError", "RankDeficiencyError",
    "SingularSystemError", "SolverBreakdown", "MeasurementSeries", "TransientSolution",
    "run_forward", "sample_measurements", "steady_solve", "transient_step", "LossWeights",
    "ReconstructionConfig", "error_metrics", "reconstruct_series", "reconstruct_step",
    "BoundarySets", "Mesh", "build_box_mesh", "classify_boundary", "nearest_node",
    "GenerationConfig", "HeatGoal", "generate_option", "generate_options",
]
