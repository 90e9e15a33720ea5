"""
Modèles - coefficient G(a, y, u) de la classe d'EDPS et ses instances SBM / FVP
===============================================================================
SBM : U = ℝ (tronqué), G = 1_{0≤a≤u} + 1_{u≤a≤0}
FVP : U = [0,1],       G = 1_{a≤u} − u
Les intégrales en a sont calculées en forme close pour SBM/FVP ; la
quadrature sur la grille a sert au cas générique et d'oracle de test.
"""
from enum import Enum
from typing import Callable, Literal, Optional, Tuple
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField
from scipy.integrate import trapezoid
from scipy.stats import norm

from .errors import GridMismatchError, ModelDomainError, NoiseRangeError
from .weighted_space import Field, SpaceTimeGrid, WeightParams

logger = logging.getLogger(__name__)

_RANGE_SLACK = 1e-12


class ModelKind(str, Enum):
    GENERIC = "generic"
    SBM = "sbm"
    FVP = "fvp"


class ModelSpec(BaseModel):
    """Coefficient G, espace auxiliaire U et condition initiale F"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: ModelKind = ModelKind.SBM
    mass: float = PydanticField(1.0, gt=0, description="Masse initiale m₀ (SBM)")
    sigma0: float = PydanticField(1.0, gt=0, description="Écart-type de la bosse initiale")
    center: float = 0.0
    sbm_branch: Literal["signed", "indicator"] = "signed"
    g_func: Optional[Callable] = None
    initial: Optional[Callable] = None
    growth_constant: Optional[float] = None
    quad_range: Tuple[float, float] = (-4.0, 4.0)
    quad_points: int = 2001

    @property
    def u_space(self) -> Tuple[float, float]:
        if self.kind == ModelKind.FVP:
            return (0.0, 1.0)
        if self.kind == ModelKind.SBM:
            return (-np.inf, np.inf)
        return self.quad_range


class ConditionReport(BaseModel):
    """Constantes empiriques des conditions de Hölder et de croissance linéaire"""
    kind: ModelKind
    samples: int
    lipschitz_k: float
    growth_k: float
    holds: bool


def g_eval(m: ModelSpec, a, y, u) -> np.ndarray:
    """Évalue G(a, y, u) (vectorisé)"""
    a = np.asarray(a, dtype=float)
    u = np.asarray(u, dtype=float)
    if m.kind == ModelKind.SBM:
        return (((0 <= a) & (a <= u)) | ((u <= a) & (a <= 0))).astype(float)
    if m.kind == ModelKind.FVP:
        return (a <= u).astype(float) - u
    if m.g_func is None:
        return np.zeros(np.broadcast(a, u).shape)
    return np.asarray(m.g_func(a, y, u), dtype=float)


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def _check_fvp_range(u) -> None:
    u = np.asarray(u, dtype=float)
    if np.any(u < -_RANGE_SLACK) or np.any(u > 1 + _RANGE_SLACK):
        raise ModelDomainError(f"FVP : u hors de [0,1] (min {u.min():.3g}, max {u.max():.3g})")


def _quadrature(m: ModelSpec, y1, u1, y2, u2, points: Optional[int] = None) -> float:
    lo, hi = (0.0, 1.0) if m.kind == ModelKind.FVP else m.quad_range
    a = np.linspace(lo, hi, points or m.quad_points)
    return float(trapezoid(g_eval(m, a, y1, u1) * g_eval(m, a, y2, u2), a))


def g_quadrature(m: ModelSpec, y1: float, u1: float, y2: float, u2: float,
                 points: Optional[int] = None) -> float:
    """∫ G(a,y1,u1) G(a,y2,u2) da par trapèzes sur une grille fine en a"""
    return _quadrature(m, y1, u1, y2, u2, points)


def g_sq_integral(m: ModelSpec, y, u):
    """∫_U G(a,y,u)² λ(da) : SBM → |u| ; FVP → u(1−u) ; générique → quadrature"""
    if m.kind == ModelKind.SBM:
        return _scalar(np.abs(np.asarray(u, dtype=float)))
    if m.kind == ModelKind.FVP:
        _check_fvp_range(u)
        u = np.asarray(u, dtype=float)
        return _scalar(u * (1.0 - u))
    return _quadrature(m, y, u, y, u)


def g_cross_integral(m: ModelSpec, y1, u1, y2, u2):
    """∫_U G(a,y1,u1) G(a,y2,u2) λ(da) ; covariance spatiale du bruit par unité de temps"""
    if m.kind == ModelKind.SBM:
        u1 = np.asarray(u1, dtype=float)
        u2 = np.asarray(u2, dtype=float)
        same_sign = (u1 * u2) >= 0
        return _scalar(np.where(same_sign, np.minimum(np.abs(u1), np.abs(u2)), 0.0))
    if m.kind == ModelKind.FVP:
        _check_fvp_range(u1)
        _check_fvp_range(u2)
        u1 = np.asarray(u1, dtype=float)
        u2 = np.asarray(u2, dtype=float)
        return _scalar(np.minimum(u1, u2) - u1 * u2)
    return _quadrature(m, y1, u1, y2, u2)


def noise_increment(m: ModelSpec, u: np.ndarray, grid: SpaceTimeGrid,
                    increments: np.ndarray, strict: bool = True) -> np.ndarray:
    """
    Σ_a G(a, y, u(y))·ΔW(a) à chaque nœud, avec la même tranche ΔW pour tous les y.

    La feuille brownienne B(a) = W([a_min, a]) est interpolée linéairement
    entre les bords des cellules a. Avec strict=False (forçage déterministe),
    B est prolongée par constantes hors de la grille auxiliaire.

    Raises:
        NoiseRangeError: masse SBM hors de [a_min, a_max]
    """
    u = np.asarray(u, dtype=float)
    if m.kind == ModelKind.GENERIC:
        g = g_eval(m, grid.a_centers[None, :], grid.nodes[:, None], u[:, None])
        return g @ increments

    edges = grid.a_edges
    sheet = np.concatenate([[0.0], np.cumsum(increments)])

    def B(v):
        return np.interp(v, edges, sheet)

    if m.kind == ModelKind.SBM:
        lo, hi = float(u.min()), float(u.max())
        out_of_range = lo < grid.a_min - _RANGE_SLACK or hi > grid.a_max + _RANGE_SLACK
        if (strict and out_of_range) or not grid.a_min <= 0 <= grid.a_max:
            raise NoiseRangeError(
                f"u ∈ [{lo:.4g}, {hi:.4g}] hors de la grille auxiliaire [{grid.a_min}, {grid.a_max}]"
            )
        signed = B(u) - B(0.0)
        if m.sbm_branch == "indicator":
            return np.where(u >= 0, signed, -signed)
        return signed

    # FVP : ∫₀¹ (1_{a≤u} − u) W(da) = W([0,u]) − u·W([0,1]), exact aussi hors de [0,1]
    if abs(grid.a_min) > _RANGE_SLACK or abs(grid.a_max - 1.0) > _RANGE_SLACK:
        raise GridMismatchError(f"FVP exige a ∈ [0,1] (reçu [{grid.a_min}, {grid.a_max}])")
    return B(u) - u * sheet[-1]


def initial_profile(m: ModelSpec, y) -> np.ndarray:
    """Condition initiale F(y)"""
    y = np.asarray(y, dtype=float)
    if m.initial is not None:
        return np.asarray(m.initial(y), dtype=float)
    z = (y - m.center) / m.sigma0
    if m.kind == ModelKind.SBM:
        # u(y) = μ₀((−∞,y]) − μ₀((−∞,0]) : préfixe signé depuis l'origine
        return m.mass * (norm.cdf(z) - norm.cdf(-m.center / m.sigma0))
    return norm.cdf(z)


def initial_density(m: ModelSpec, y) -> np.ndarray:
    """Densité de μ₀ pour la condition initiale par défaut"""
    y = np.asarray(y, dtype=float)
    scale = m.mass if m.kind == ModelKind.SBM else 1.0
    return scale * norm.pdf((y - m.center) / m.sigma0) / m.sigma0


def initial_field(m: ModelSpec, grid: SpaceTimeGrid) -> Field:
    return Field(values=initial_profile(m, grid.nodes), grid=grid, time=0.0)


def growth_constant(m: ModelSpec, grid: SpaceTimeGrid, w: WeightParams) -> float:
    """K₁ tel que |F(y)| ≤ K₁ e^{β₀|y|}"""
    if m.growth_constant is not None:
        return float(m.growth_constant)
    if m.initial is None and m.kind == ModelKind.SBM:
        return float(m.mass)
    if m.initial is None and m.kind == ModelKind.FVP:
        return 1.0
    y = grid.nodes
    return float(np.max(np.abs(initial_profile(m, y)) * np.exp(-w.beta0 * np.abs(y))))


def check_conditions(m: ModelSpec, samples: int = 2000, seed: int = 0) -> ConditionReport:
    """
    Plus petites constantes K empiriques pour
    ∫|G(u₁)−G(u₂)|² ≤ K|u₁−u₂| et ∫|G(u)|² ≤ K(1+u²).
    """
    rng = np.random.default_rng(seed)
    if m.kind == ModelKind.FVP:
        lo, hi = 0.0, 1.0
    elif m.kind == ModelKind.SBM:
        lo, hi = -3.0, 3.0
    else:
        lo, hi = m.quad_range
    y = rng.uniform(-5.0, 5.0, samples)
    u1 = np.concatenate([rng.uniform(lo, hi, samples), np.linspace(lo, hi, 201)])
    u2 = np.concatenate([rng.uniform(lo, hi, samples), np.linspace(hi, lo, 201)])
    y = np.concatenate([y, np.zeros(201)])

    lipschitz, growth = 0.0, 0.0
    for yi, a, b in zip(y, u1, u2):
        sq_a = g_sq_integral(m, yi, a)
        sq_b = g_sq_integral(m, yi, b)
        diff = sq_a + sq_b - 2.0 * g_cross_integral(m, yi, a, yi, b)
        if abs(a - b) > 1e-12:
            lipschitz = max(lipschitz, diff / abs(a - b))
        growth = max(growth, sq_a / (1.0 + a * a))

    holds = bool(np.isfinite(lipschitz) and np.isfinite(growth))
    report = ConditionReport(kind=m.kind, samples=samples, lipschitz_k=float(lipschitz),
                             growth_k=float(growth), holds=holds)
    logger.info(f"✅ Conditions {m.kind.value}: K_lip={report.lipschitz_k:.4f}, K_croiss={report.growth_k:.4f}")
    return report
