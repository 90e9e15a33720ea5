from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError
from scipy.stats import norm

from app.services.errors import GridMismatchError
from app.services.exit_times import (
    ExitMode,
    ExitSpec,
    attraction_counts,
    detect_hitting,
    detect_norm_exit,
    detect_population_exit,
    mc_exit,
    mc_exit_times,
    outside_mass,
    summarize_exit,
)
from app.services.models import ModelKind, ModelSpec
from app.services.solver import SolverConfig
from app.services.weighted_space import Field, SpaceTimeGrid, WeightParams, cumulative_to_measure


def test_exit_spec_requires_delta_below_r() -> None:
    with pytest.raises(ValidationError):
        ExitSpec(r=0.1, delta0=0.2, T=1.0)


def test_outside_mass_of_gaussian(small_grid: SpaceTimeGrid) -> None:
    f = Field(values=norm.cdf(small_grid.nodes), grid=small_grid, time=0.1)
    expected = 2 * norm.cdf(-1.0) - (norm.cdf(-4.0) + norm.sf(4.0))
    assert outside_mass(f, 1.0) == pytest.approx(expected, rel=1e-9)
    assert outside_mass(cumulative_to_measure(f), 1.0) == pytest.approx(expected, rel=1e-9)
    with pytest.raises(GridMismatchError):
        outside_mass(f, 5.0)


def test_detectors_ignore_time_zero(small_grid: SpaceTimeGrid, weights: WeightParams) -> None:
    spec = ExitSpec(r=0.01, delta0=0.005, T=1.0)
    big = Field(values=np.ones(small_grid.nx + 1), grid=small_grid, time=0.0)
    assert detect_norm_exit(big, spec, weights) is None
    later = Field(values=np.ones(small_grid.nx + 1), grid=small_grid, time=0.2)
    assert detect_norm_exit(later, spec, weights) == 0.2
    assert detect_hitting(later, spec, weights) is None
    quiet = Field(values=np.zeros(small_grid.nx + 1), grid=small_grid, time=0.2)
    assert detect_hitting(quiet, spec, weights) == 0.2


def test_population_detector(small_grid: SpaceTimeGrid) -> None:
    spec = ExitSpec(r=0.5, delta0=0.05, T=1.0, mode=ExitMode.POPULATION_EXIT)
    heavy = Field(values=2 * norm.cdf(small_grid.nodes), grid=small_grid, time=0.1)
    light = Field(values=norm.cdf(small_grid.nodes), grid=small_grid, time=0.1)
    assert detect_population_exit(heavy, spec) == 0.1
    assert detect_population_exit(light, spec) is None


def test_certain_exit_without_noise(sbm: ModelSpec, weights: WeightParams, small_grid: SpaceTimeGrid) -> None:
    # ‖u₀‖_β ≈ 0.13 : la sortie de rayon 0.05 a lieu au premier pas
    spec = ExitSpec(r=0.05, delta0=0.01, T=0.5)
    estimate = mc_exit(spec, sbm, SolverConfig(epsilon=0.0, weights=weights), small_grid, replicas=3, seed=1)
    assert estimate.p_hat == 1.0
    assert estimate.std_err == 0.0
    assert estimate.mean_tau_censored == pytest.approx(small_grid.dt)
    assert estimate.ci == (1.0, 1.0)


def test_no_exit_for_large_radius(sbm: ModelSpec, solver_cfg: SolverConfig, small_grid: SpaceTimeGrid) -> None:
    spec = ExitSpec(r=10.0, delta0=0.05, T=0.25)
    estimate = mc_exit(spec, sbm, solver_cfg, small_grid, replicas=4, seed=2)
    assert estimate.p_hat == 0.0
    assert estimate.mean_tau_censored == pytest.approx(0.25)
    assert estimate.censor_fraction == 1.0


def test_population_exit_of_heavy_mass(weights: WeightParams, small_grid: SpaceTimeGrid) -> None:
    heavy = ModelSpec(kind=ModelKind.SBM, mass=2.0)
    spec = ExitSpec(r=0.5, delta0=0.05, T=0.5, mode=ExitMode.POPULATION_EXIT)
    estimate = mc_exit(spec, heavy, SolverConfig(epsilon=0.0, weights=weights), small_grid, replicas=2, seed=3)
    assert estimate.p_hat == 1.0


def test_population_radius_outside_grid(sbm: ModelSpec, solver_cfg: SolverConfig,
                                         small_grid: SpaceTimeGrid) -> None:
    spec = ExitSpec(r=10.0, T=0.5, mode=ExitMode.POPULATION_EXIT)
    with pytest.raises(GridMismatchError):
        mc_exit(spec, sbm, solver_cfg, small_grid, replicas=5, seed=0)


def test_horizon_beyond_grid(sbm: ModelSpec, solver_cfg: SolverConfig, small_grid: SpaceTimeGrid) -> None:
    with pytest.raises(ValueError):
        mc_exit(ExitSpec(r=1.0, T=2.0), sbm, solver_cfg, small_grid, replicas=1, seed=0)


def test_failed_replicas_are_excluded() -> None:
    frame = pd.DataFrame({
        "replica_id": [0, 1, 2, 3],
        "tau": [0.1, np.nan, np.nan, 0.3],
        "tau1": [np.nan] * 4,
        "error": [None, None, "boom", None],
    })
    frame["failed"] = frame["error"].notna()
    estimate = summarize_exit(frame, T=1.0)
    assert estimate.replicas == 3
    assert estimate.failed_replicas == 1
    assert estimate.p_hat == pytest.approx(2 / 3)
    assert estimate.mean_tau_censored == pytest.approx((0.1 + 1.0 + 0.3) / 3)


def test_exit_times_are_ordered(sbm: ModelSpec, solver_cfg: SolverConfig, small_grid: SpaceTimeGrid) -> None:
    frame = mc_exit_times(ExitSpec(r=0.2, T=0.5), sbm, solver_cfg, small_grid, replicas=5, seed=4)
    assert list(frame["replica_id"]) == [0, 1, 2, 3, 4]
    assert not frame["failed"].any()


@pytest.mark.slow
def test_worker_count_does_not_change_results(sbm: ModelSpec, solver_cfg: SolverConfig,
                                              small_grid: SpaceTimeGrid) -> None:
    spec = ExitSpec(r=0.2, T=0.5)
    serial = mc_exit_times(spec, sbm, solver_cfg, small_grid, replicas=6, seed=4, workers=1)
    pooled = mc_exit_times(spec, sbm, solver_cfg, small_grid, replicas=6, seed=4, workers=2)
    pd.testing.assert_frame_equal(serial, pooled)


def test_attraction_counts(sbm: ModelSpec, solver_cfg: SolverConfig, small_grid: SpaceTimeGrid) -> None:
    counts = attraction_counts(ExitSpec(r=0.5, delta0=0.05, T=0.5), sbm, solver_cfg, small_grid,
                               replicas=3, seed=5)
    assert counts["replicas"] == 3
    assert 0.0 <= counts["p_tau_before_T_before_tau1"] <= counts["p_tau"] <= 1.0
    assert counts["tau_first"] <= counts["both_fired"]


def test_exit_probability_is_monotone(sbm: ModelSpec, weights: WeightParams, small_grid: SpaceTimeGrid) -> None:
    # mêmes graines : mêmes trajectoires, donc monotonie exacte
    grid = small_grid.model_copy(update={"a_min": -4.0, "a_max": 4.0, "na": 128})
    cfg = SolverConfig(epsilon=0.5, weights=weights)
    by_T = [mc_exit(ExitSpec(r=0.2, T=T), sbm, cfg, grid, replicas=8, seed=11).p_hat
            for T in (0.125, 0.25, 0.5)]
    by_r = [mc_exit(ExitSpec(r=r, T=0.5), sbm, cfg, grid, replicas=8, seed=11).p_hat
            for r in (0.15, 0.2, 0.3)]
    assert by_T == sorted(by_T)
    assert by_r == sorted(by_r, reverse=True)
