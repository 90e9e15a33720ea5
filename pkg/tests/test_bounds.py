from __future__ import annotations

import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import quad
from scipy.stats import norm

from app.services.bounds import (
    BoundConstants,
    RateValue,
    build_constants,
    c2_coefficient,
    compute_K2,
    eval_J,
    eval_N2,
    mean_size_rhs,
    optimize_k,
    population_norm_bound,
    thm1_lower,
    thm1_mean_bound,
    thm2_bounds,
    thm3_exit_bound,
    upperbound_survival,
    weighted_gaussian_mass,
)
from app.services.errors import VacuousBoundError
from app.services.models import ModelSpec
from app.services.weighted_space import SpaceTimeGrid, WeightParams


def make_constants(**update) -> BoundConstants:
    base = dict(K1=1.0, K2=1.0, C1=0.1, C2=1.0, K5=0.0, K6=0.0, K9=1.0, M=1.0, t_min=0.01)
    base.update(update)
    return BoundConstants(**base)


def test_c2_coefficient() -> None:
    assert c2_coefficient(1.0, 1.0, 1.0, 4) == pytest.approx(2 * 64 / 80)


def test_k_must_be_multiple_of_four() -> None:
    with pytest.raises(ValidationError):
        make_constants(k=6)


def test_with_k_recomputes_c2_unless_overridden() -> None:
    c = make_constants(K3=1.0, K4=1.0)
    assert c.with_k(8).C2 == pytest.approx(c2_coefficient(1.0, 1.0, 1.0, 8))
    pinned = make_constants(K3=1.0, K4=1.0, overridden=frozenset({"C2"}))
    assert pinned.with_k(8).C2 == 1.0


def test_J_value_and_edge_cases() -> None:
    c = make_constants()
    # dénominateur r√t_min − C₁C₄ = 0.1
    result = eval_J(2.0, 1e-6, 1.0, c)
    assert result.value == pytest.approx(8 * 4 * 1e-3 / (0.1 * 3))
    assert not result.trivial
    assert eval_J(2.0, 0.0, 1.0, c).value == 0.0
    # r√t_min = C₁C₄ mais r√T > C₁C₄ : sup restreint infini, pas de drapeau
    unbounded = eval_J(1.0, 1e-6, 1.0, c)
    assert unbounded.value == 1.0 and not unbounded.trivial
    # r√T ≤ C₁C₄ : aucun t admissible
    assert eval_J(0.05, 1e-6, 1.0, c).trivial
    assert eval_J(0.05, 1e-6, 1.0, c).value == 1.0
    assert eval_J(2.0, 0.5, 1.0, c).value == 1.0
    with pytest.raises(ValueError):
        eval_J(2.0, 0.1, 0.0, c)


def test_J_monotonicity() -> None:
    c = make_constants()
    eps = [1e-8, 1e-7, 1e-6]
    values = [eval_J(2.0, e, 1.0, c).value for e in eps]
    assert values == sorted(values)
    radii = [2.0, 3.0, 5.0]
    values = [eval_J(r, 1e-6, 1.0, c).value for r in radii]
    assert values == sorted(values, reverse=True)


def test_optimize_k_never_worse_than_k4() -> None:
    c = make_constants(K3=0.5, K4=0.5, M=2.0)
    k, best = optimize_k(2.0, 1e-6, 1.0, c, k_max=32)
    assert k % 4 == 0 and 4 <= k <= 32
    assert best.value <= eval_J(2.0, 1e-6, 1.0, c.with_k(4)).value
    with pytest.raises(ValueError):
        optimize_k(2.0, 1e-6, 1.0, c, k_max=2)


def test_population_norm_bound_uses_domain_length(small_grid: SpaceTimeGrid) -> None:
    c = make_constants()
    r = 6.0
    expected = eval_J(r * r / 8.0, 1e-6, 1.0, c).value
    assert population_norm_bound(r, 1e-6, 1.0, small_grid, c).value == pytest.approx(expected)


def test_thm1_lower() -> None:
    assert thm1_lower(1.0, 0.1, 0.1) == pytest.approx(math.exp(-9.0))
    assert thm1_lower(RateValue(value=math.inf, provenance="evaluated"), 0.1, 0.1) == 0.0
    assert thm1_lower(0.05, 0.1, 0.1) == 1.0


def test_thm1_mean_bound() -> None:
    assert thm1_mean_bound(1.0, 0.1, 0.1) == pytest.approx(1.0 / (1.0 - math.exp(-9.0)))
    with pytest.raises(VacuousBoundError):
        thm1_mean_bound(0.1, 0.1, 0.1)


def test_upperbound_survival() -> None:
    assert upperbound_survival(2.5, 1.0, 0.1, 0.1) == pytest.approx(math.exp(-18.0))
    assert upperbound_survival(0.5, 1.0, 0.1, 0.1) == 1.0
    with pytest.raises(VacuousBoundError):
        upperbound_survival(2.0, 0.05, 0.1, 0.1)


def test_thm2_bounds(weights: WeightParams) -> None:
    c = make_constants()
    bracket = thm2_bounds(2.0, 1.5, 1e-6, 1.0, 1.0, c)
    assert 0.0 <= bracket.lower <= 1.0
    assert bracket.upper >= thm1_lower(1.0, 1e-6, c.delta)
    assert bracket.mean_upper >= 1.0
    with pytest.raises(ValueError):
        thm2_bounds(1.0, 1.5, 1e-6, 1.0, 1.0, c)


def test_N2_and_population_exit_bound(weights: WeightParams) -> None:
    c = make_constants()
    n2 = eval_N2(1.0, 0.01, 1.0, weights, c)
    assert n2.value == pytest.approx(1.0 / (0.1 * (1.0 + math.exp(1.5))))
    assert not n2.trivial
    crowded = make_constants(K5=1.0)
    assert eval_N2(1.0, 0.01, 1.0, weights, crowded).trivial
    assert thm3_exit_bound(1.0, 0.01, 1.0, weights, crowded).trivial
    assert thm3_exit_bound(1.0, 0.0, 1.0, weights, c).value == 0.0


def test_mean_size_rhs(weights: WeightParams) -> None:
    c = make_constants()
    # β = 1 : K(β⁶+β⁴−β²) = 1, (β−β₀)² = 0.5625
    assert mean_size_rhs(1.0, 0.0, weights, c).value == pytest.approx(2.0 + 2 * 0.5625)
    assert mean_size_rhs(0.01, 0.0, weights, c).trivial
    with pytest.raises(ValueError):
        mean_size_rhs(0.0, 0.1, weights, c)


@pytest.mark.parametrize("y", [0.0, 0.3, -2.0])
def test_weighted_gaussian_mass_closed_form(y: float) -> None:
    c, lam = 0.5, 1.0
    reference = quad(lambda x: norm.pdf(y - x, scale=np.sqrt(c)) * np.exp(lam * abs(x)), -30, 30,
                     points=[0.0], limit=200)[0]
    assert weighted_gaussian_mass(y, c, lam) == pytest.approx(reference, rel=1e-6)


def test_K2_dominates_gaussian_mass(weights: WeightParams) -> None:
    assert compute_K2(0.5, weights) >= np.sqrt(2 * np.pi * 0.5)
    with pytest.raises(ValueError):
        compute_K2(0.0, weights)


def test_build_constants_provenance(sbm: ModelSpec, small_grid: SpaceTimeGrid, weights: WeightParams) -> None:
    c = build_constants(sbm, small_grid, weights, T=0.5, overrides={"M": 2.0, "K3": 0.1, "K4": 0.2})
    assert c.M == 2.0
    assert c.provenance["M"] == "user_supplied"
    assert c.provenance["C1"] == "computed"
    assert {"M", "K3", "K4"} <= c.overridden
    assert c.C2 == pytest.approx(c2_coefficient(0.1, 0.2, 2.0, 4))
    assert c.t_min == pytest.approx(small_grid.dt)
    assert c.ledger()["overridden"] == ["K3", "K4", "M"]


def test_build_constants_computed(sbm: ModelSpec, small_grid: SpaceTimeGrid, weights: WeightParams) -> None:
    c = build_constants(sbm, small_grid, weights, T=0.5, t_min=0.05)
    assert c.provenance["M"] == "heat_flow_fallback"
    for name in ("K2", "K3", "K4", "K5", "K6", "K9", "M"):
        value = getattr(c, name)
        assert np.isfinite(value) and value >= 0.0, name
    assert c.K1 == pytest.approx(1.0)
