"""Joint moments, joint MGFs and correlations of Age-of-Information processes."""

from .disciplines import Discipline, MultiSourceParams, build_model
from .errors import (
    AoiError,
    ConfigError,
    ModelError,
    NotErgodicError,
    OutOfRegionError,
    SimulationError,
    UnstableError,
)
from .shs_model import ResetMap, ShsModel, Transition
from .stationary_solver import (
    MgfQuery,
    MomentQuery,
    solve_joint_mgf,
    solve_joint_moments,
    stability_check,
    stationary_distribution,
    transient_integrate,
)
from .tensor import DenseTensor, mode_product, reset_contraction

__version__ = "0.1.0"

__all__ = [
    "AoiError",
    "ConfigError",
    "DenseTensor",
    "Discipline",
    "MgfQuery",
    "ModelError",
    "MomentQuery",
    "MultiSourceParams",
    "NotErgodicError",
    "OutOfRegionError",
    "ResetMap",
    "ShsModel",
    "SimulationError",
    "Transition",
    "UnstableError",
    "build_model",
    "mode_product",
    "reset_contraction",
    "solve_joint_mgf",
    "solve_joint_moments",
    "stability_check",
    "stationary_distribution",
    "transient_integrate",
]
