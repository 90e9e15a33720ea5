from __future__ import annotations

from pathlib import Path

import pytest

from app.services.experiment import ExperimentConfig
from app.services.models import ModelKind, ModelSpec
from app.services.solver import SolverConfig
from app.services.weighted_space import SpaceTimeGrid, WeightParams


@pytest.fixture
def weights() -> WeightParams:
    return WeightParams(beta=1.0, beta0=0.25, beta1=0.5)


@pytest.fixture
def small_grid() -> SpaceTimeGrid:
    # dx = 0.25, dt = 1/128 : dt/dx² = 0.125
    return SpaceTimeGrid(x_min=-4.0, x_max=4.0, nx=32, a_min=-2.0, a_max=2.0, na=64, t_end=0.5, nt=64)


@pytest.fixture
def fvp_grid(small_grid: SpaceTimeGrid) -> SpaceTimeGrid:
    return small_grid.model_copy(update={"a_min": 0.0, "a_max": 1.0})


@pytest.fixture
def sbm() -> ModelSpec:
    return ModelSpec(kind=ModelKind.SBM, mass=1.0, sigma0=1.0)


@pytest.fixture
def fvp() -> ModelSpec:
    return ModelSpec(kind=ModelKind.FVP, sigma0=1.0)


@pytest.fixture
def solver_cfg(weights: WeightParams) -> SolverConfig:
    return SolverConfig(epsilon=0.1, weights=weights)


@pytest.fixture
def small_config(tmp_path: Path) -> ExperimentConfig:
    """Configuration d'expérience sur une petite grille, sorties dans tmp_path"""
    return ExperimentConfig(
        grid={"x_min": -4.0, "x_max": 4.0, "nx": 32, "na": 64, "nt": 64, "t_end": 0.5},
        solver={"epsilon": 0.1},
        exit={"r": 0.5, "delta0": 0.05, "T": 0.5},
        bounds={"rate_inf": 1.0, "rate_inf_ann": 0.5},
        run={"replicas": 4, "seed": 7, "workers": 1, "output_dir": str(tmp_path / "out")},
    )
