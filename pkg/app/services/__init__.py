# Services de simulation, de bornes et de grandes déviations
from .errors import ConfigValidationError, SimulationError
from .experiment import ExperimentConfig, RunManifest, load_config, mean_size_experiment, run_experiment
from .exit_times import ExitMode, ExitSpec, mc_exit
from .models import ModelKind, ModelSpec
from .solver import SolverConfig, solve_path
from .weighted_space import SpaceTimeGrid, WeightParams

__all__ = [
    "ConfigValidationError",
    "SimulationError",
    "ExperimentConfig",
    "RunManifest",
    "load_config",
    "mean_size_experiment",
    "run_experiment",
    "ExitMode",
    "ExitSpec",
    "mc_exit",
    "ModelKind",
    "ModelSpec",
    "SolverConfig",
    "solve_path",
    "SpaceTimeGrid",
    "WeightParams",
]
