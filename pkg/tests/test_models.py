from __future__ import annotations

import numpy as np
import pytest

from app.services.errors import GridMismatchError, ModelDomainError, NoiseRangeError
from app.services.models import (
    ModelKind,
    ModelSpec,
    check_conditions,
    g_cross_integral,
    g_eval,
    g_quadrature,
    g_sq_integral,
    growth_constant,
    initial_density,
    initial_field,
    initial_profile,
    noise_increment,
)
from app.services.weighted_space import SpaceTimeGrid, WeightParams


@pytest.mark.parametrize("u", [0.0, 0.3, -0.7, 2.5])
def test_sbm_square_integral_is_abs(sbm: ModelSpec, u: float) -> None:
    assert g_sq_integral(sbm, 0.0, u) == pytest.approx(abs(u))
    assert g_quadrature(sbm, 0.0, u, 0.0, u, points=40001) == pytest.approx(abs(u), abs=1e-3)


@pytest.mark.parametrize("u", [0.0, 0.25, 0.5, 1.0])
def test_fvp_square_integral(fvp: ModelSpec, u: float) -> None:
    assert g_sq_integral(fvp, 0.0, u) == pytest.approx(u * (1 - u))


def test_cross_integrals(sbm: ModelSpec, fvp: ModelSpec) -> None:
    assert g_cross_integral(sbm, 0.0, 0.7, 1.0, 0.3) == pytest.approx(0.3)
    assert g_cross_integral(sbm, 0.0, 0.5, 1.0, -0.5) == pytest.approx(0.0)
    assert g_cross_integral(fvp, 0.0, 0.3, 1.0, 0.8) == pytest.approx(0.3 - 0.24)


def test_fvp_domain(fvp: ModelSpec) -> None:
    with pytest.raises(ModelDomainError):
        g_sq_integral(fvp, 0.0, 1.5)


def test_g_eval_indicators(sbm: ModelSpec, fvp: ModelSpec) -> None:
    a = np.array([-0.5, 0.2, 0.8])
    np.testing.assert_allclose(g_eval(sbm, a, 0.0, 0.5), [0.0, 1.0, 0.0])
    np.testing.assert_allclose(g_eval(sbm, a, 0.0, -1.0), [1.0, 0.0, 0.0])
    np.testing.assert_allclose(g_eval(fvp, np.array([0.2, 0.8]), 0.0, 0.5), [0.5, -0.5])


def test_generic_model_uses_quadrature() -> None:
    m = ModelSpec(kind=ModelKind.GENERIC, g_func=lambda a, y, u: np.exp(-a * a) * u, quad_range=(-6.0, 6.0))
    assert g_sq_integral(m, 0.0, 2.0) == pytest.approx(4.0 * np.sqrt(np.pi / 2), rel=1e-4)


def test_sbm_noise_is_sheet_difference(sbm: ModelSpec, small_grid: SpaceTimeGrid) -> None:
    increments = np.ones(small_grid.na) * small_grid.da
    u = np.array([-1.0, 0.0, 0.5, 1.0])
    # B(a) = a − a_min pour des incréments constants : B(u) − B(0) = u
    np.testing.assert_allclose(noise_increment(sbm, u, small_grid, increments), u, atol=1e-12)


def test_sbm_indicator_branch_flips_sign(small_grid: SpaceTimeGrid) -> None:
    m = ModelSpec(kind=ModelKind.SBM, sbm_branch="indicator")
    increments = np.ones(small_grid.na) * small_grid.da
    u = np.array([-1.0, 0.5])
    np.testing.assert_allclose(noise_increment(m, u, small_grid, increments), [1.0, 0.5], atol=1e-12)


def test_sbm_noise_range(sbm: ModelSpec, small_grid: SpaceTimeGrid) -> None:
    increments = np.zeros(small_grid.na)
    with pytest.raises(NoiseRangeError):
        noise_increment(sbm, np.array([0.0, 3.0]), small_grid, increments)
    relaxed = noise_increment(sbm, np.array([0.0, 3.0]), small_grid, np.ones(small_grid.na), strict=False)
    # B prolongée par sa valeur en a_max = 2 : B(2) − B(0) = na/2
    assert relaxed[1] == pytest.approx(small_grid.na / 2)


def test_fvp_noise_conserves_endpoints(fvp: ModelSpec, fvp_grid: SpaceTimeGrid) -> None:
    increments = np.random.default_rng(0).normal(size=fvp_grid.na)
    values = noise_increment(fvp, np.array([0.0, 0.4, 1.0]), fvp_grid, increments)
    assert values[0] == pytest.approx(0.0, abs=1e-12)
    assert values[2] == pytest.approx(0.0, abs=1e-12)


def test_fvp_requires_unit_interval(fvp: ModelSpec, small_grid: SpaceTimeGrid) -> None:
    with pytest.raises(GridMismatchError):
        noise_increment(fvp, np.array([0.5]), small_grid, np.zeros(small_grid.na))


def test_initial_conditions(sbm: ModelSpec, fvp: ModelSpec, small_grid: SpaceTimeGrid) -> None:
    u0 = initial_profile(sbm, small_grid.nodes)
    assert u0[small_grid.nx // 2] == pytest.approx(0.0)
    assert u0[-1] - u0[0] == pytest.approx(1.0, abs=1e-4)
    f0 = initial_field(fvp, small_grid)
    assert f0.time == 0.0
    assert np.all(np.diff(f0.values) >= 0)
    heavy = ModelSpec(kind=ModelKind.SBM, mass=2.0)
    assert initial_density(heavy, 0.0) == pytest.approx(2.0 / np.sqrt(2 * np.pi))


def test_growth_constant(sbm: ModelSpec, small_grid: SpaceTimeGrid, weights: WeightParams) -> None:
    assert growth_constant(sbm, small_grid, weights) == pytest.approx(1.0)
    custom = ModelSpec(kind=ModelKind.SBM, initial=lambda y: np.ones_like(y))
    assert growth_constant(custom, small_grid, weights) == pytest.approx(1.0)


@pytest.mark.parametrize("kind", [ModelKind.SBM, ModelKind.FVP])
def test_conditions_hold(kind: ModelKind) -> None:
    report = check_conditions(ModelSpec(kind=kind), samples=200)
    assert report.holds
    assert report.lipschitz_k <= 1.0 + 1e-9
    assert report.growth_k <= 0.5 + 1e-9
