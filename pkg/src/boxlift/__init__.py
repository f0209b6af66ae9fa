"""Dual-arm box lifting: path refinement, load identification, wrench distribution, execution."""

from .core import GRAVITY, GravityVec, Pose6, Stiffness, Wrench
from .friction import ContactPatch, FrictionParams, effective_radius, limit_surface_residual
from .estimator import InertialEstimate, MeasurementBatch, estimate
from .wrench_opt import GraspGeometry, WrenchWeight, optimize_wrenches
from .simplant import BoxModel, EnvironmentModel, PlantConfig
from .dmp_refine import ExplorationState, RefTrajectory, refine
from .exec_loop import WrenchPid, nominal_command, pid_step, run_execution
from .scenario import ScenarioConfig

__all__ = [
    "GRAVITY", "GravityVec", "Pose6", "Stiffness", "Wrench",
    "ContactPatch", "FrictionParams", "effective_radius", "limit_surface_residual",
    "InertialEstimate", "MeasurementBatch", "estimate",
    "GraspGeometry", "WrenchWeight", "optimize_wrenches",
    "BoxModel", "EnvironmentModel", "PlantConfig",
    "ExplorationState", "RefTrajectory", "refine",
    "WrenchPid", "nominal_command", "pid_step", "run_execution",
    "ScenarioConfig",
]
