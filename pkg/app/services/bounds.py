"""
Bornes - registre des constantes et évaluation de toutes les bornes explicites
==============================================================================
J(r,ε,T) = sup_t 8k ε^{1/2} C₂^{1/k} C₃ √T / ((r√t − C₁C₄)(k−1))
bornes inférieures et temps moyens via le taux de grandes déviations,
bornes à point attractif, N₂ et borne de sortie de population,
borne sur la taille moyenne de la population.

Les sups sur t ∈ (0,T] sont pris sur [t_min, T].
"""
from typing import Dict, FrozenSet, Literal, Mapping, Optional, Tuple, Union
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField, field_validator
from scipy.integrate import quad, trapezoid
from scipy.special import log_ndtr

from .errors import VacuousBoundError
from .models import ModelSpec, growth_constant, initial_profile
from .solver import SolverConfig, estimate_moment_constant, heat_convolve
from .weighted_space import SpaceTimeGrid, WeightParams

logger = logging.getLogger(__name__)

_LADDER = 8


class BoundConstants(BaseModel):
    """Registre complet des constantes alimentant les bornes"""
    model_config = ConfigDict(frozen=True)

    K1: float
    K2: float
    C1: float
    C2: float
    C3: float = 1.0
    C4: float = 1.0
    C5: float = 1.0
    K3: float = 0.0
    K4: float = 0.0
    K5: float
    K6: float
    K9: float
    K: float = 1.0
    k: int = 4
    M: float
    delta: float = PydanticField(0.1, gt=0)
    t_min: float = PydanticField(..., gt=0)
    overridden: FrozenSet[str] = frozenset()
    provenance: Dict[str, str] = PydanticField(default_factory=dict)

    @field_validator("k")
    @classmethod
    def _check_k(cls, v: int) -> int:
        if v < 4 or v % 4:
            raise ValueError(f"k doit être ≥ 4 et multiple de 4 (reçu {v})")
        return v

    def with_k(self, k: int) -> "BoundConstants":
        """Même registre pour un autre k ; C₂ recalculé sauf s'il est imposé"""
        update = {"k": k}
        if "C2" not in self.overridden:
            update["C2"] = c2_coefficient(self.K3, self.K4, self.M, k)
        return BoundConstants(**{**self.model_dump(), **update})

    def ledger(self) -> Dict[str, object]:
        data = self.model_dump(exclude={"overridden", "provenance"})
        data["overridden"] = sorted(self.overridden)
        data["provenance"] = dict(self.provenance)
        return data


class BoundResult(BaseModel):
    """Valeur d'une borne ; trivial = aucune information (valeur 1 ou région vide)"""
    value: float
    trivial: bool = False
    label: str = ""


class RateValue(BaseModel):
    """Infimum d'un taux sur un ensemble de sortie"""
    value: float = PydanticField(..., ge=0)
    provenance: Literal["evaluated", "user_supplied"] = "user_supplied"
    candidate: bool = False

    @property
    def label(self) -> str:
        return "candidate infimum" if self.candidate else self.provenance


RateLike = Union[RateValue, float]


def as_rate(value: RateLike) -> RateValue:
    return value if isinstance(value, RateValue) else RateValue(value=float(value))


def c2_coefficient(K3: float, K4: float, M: float, k: int) -> float:
    """C₂ = (K₃+K₄) 2^{k+2} M / (9k² − 18k + 8)"""
    return (K3 + K4) * 2.0 ** (k + 2) * M / (9 * k * k - 18 * k + 8)


def log_weighted_gaussian_mass(y, c, lam):
    """log ∫ p_c(y−x) e^{λ|x|} dx (forme close, c > 0)"""
    y = np.asarray(y, dtype=float)
    sc = np.sqrt(c)
    return lam * lam * c / 2.0 + np.logaddexp(
        lam * y + log_ndtr((y + lam * c) / sc),
        -lam * y + log_ndtr((-y + lam * c) / sc),
    )


def weighted_gaussian_mass(y, c, lam):
    if c <= 0:
        return np.exp(lam * np.abs(y))
    return np.exp(log_weighted_gaussian_mass(y, c, lam))


def _kernel_product(a: float, b: float, y: float, lam: float) -> float:
    """∫ p_a(y−x) p_b(y−x) e^{λ|x|} dx = (2π(a+b))^{-1/2} · WGM(y, ab/(a+b), λ)"""
    return weighted_gaussian_mass(y, a * b / (a + b), lam) / np.sqrt(2.0 * np.pi * (a + b))


def compute_K2(t: float, w: WeightParams, y_max: float = 4.0, n_y: int = 41) -> float:
    """
    K₂ = sup_y ∫ exp(−(y−x)²/2t − (|y|−|x|)β₀) dx par quadrature,
    maximisé sur y ∈ [−y_max, y_max].
    """
    if t <= 0:
        raise ValueError(f"t={t} doit être > 0")
    beta0 = w.beta0

    def integrand(x, y):
        return np.exp(-(y - x) ** 2 / (2.0 * t) - (abs(y) - abs(x)) * beta0)

    best = 0.0
    span = 12.0 * np.sqrt(t) + 2.0 * beta0 * t
    for y in np.linspace(-y_max, y_max, n_y):
        lo, hi = y - span - beta0 * t, y + span + beta0 * t
        cuts = sorted({lo, min(0.0, y), max(0.0, y), hi})
        cuts = [c for c in cuts if lo <= c <= hi]
        total = sum(quad(integrand, c0, c1, args=(y,), limit=200)[0] for c0, c1 in zip(cuts[:-1], cuts[1:]))
        best = max(best, total)
    return float(best)


def _time_ladder(t_min: float, T: float, n: int = _LADDER) -> np.ndarray:
    T = max(T, t_min)
    if T <= t_min * (1 + 1e-12):
        return np.array([t_min])
    return np.geomspace(t_min, T, n)


def _y_ladder(y_max: float) -> np.ndarray:
    return np.linspace(0.0, min(y_max, 4.0), 3)


def compute_K3(w: WeightParams, t_min: float, T: float, y_max: float = 4.0) -> float:
    """
    K₃ = sup ∫₀^{t₁} ∫ (p_{t−s} − p_{t₁−s})²(y−x) e^{2β₁|x|} dx ds / (e^{2β₁|y|}(t − t₁))
    sur des couples t₁ < t d'une échelle géométrique de [t_min, T].
    """
    lam = 2.0 * w.beta1
    ladder = _time_ladder(t_min, T)
    best = 0.0
    for y in _y_ladder(y_max):
        scale = np.exp(-lam * abs(y))
        for i, t1 in enumerate(ladder):
            for t in ladder[i + 1:]:
                gap = t - t1

                def integrand(v):
                    # b = t₁ − s = v², ds = 2v dv
                    b = v * v
                    a = b + gap
                    if b == 0.0:
                        # limite de 2v·∫p_b² e^{λ|x|} quand b → 0
                        return float(np.exp(lam * abs(y)) / np.sqrt(np.pi))
                    return 2.0 * v * (_kernel_product(a, a, y, lam) + _kernel_product(b, b, y, lam)
                                      - 2.0 * _kernel_product(a, b, y, lam))

                value = quad(integrand, 0.0, np.sqrt(t1), limit=200)[0]
                best = max(best, value * scale / gap)
    return float(best)


def compute_K4(w: WeightParams, t_min: float, T: float, y_max: float = 4.0) -> float:
    """
    K₄ = sup ∫_{t₁}^{t} ∫ p_{t−s}(y−x)² e^{2β₁|x|} dx ds / (e^{2β₁|y|}(t − t₁))
    avec τ = t − s = v² pour lever la singularité en τ = 0.
    """
    lam = 2.0 * w.beta1
    ladder = _time_ladder(t_min, T)
    gaps = sorted({float(t - t1) for i, t1 in enumerate(ladder) for t in ladder[i + 1:]}) or [t_min]
    best = 0.0
    for y in _y_ladder(y_max):
        scale = np.exp(-lam * abs(y))
        for gap in gaps:
            # ∫ p_τ² e^{λ|x|} dx = WGM(y, τ/2, λ)/(2√(πτ)) ; dτ = 2v dv
            value = quad(lambda v: weighted_gaussian_mass(y, max(v * v / 2.0, 1e-300), lam) / np.sqrt(np.pi),
                         0.0, np.sqrt(gap), limit=200)[0]
            best = max(best, value * scale / gap)
    return float(best)


def _initial_forcing(m: ModelSpec, grid: SpaceTimeGrid, t: float, r: float) -> float:
    # 2|∫ (p_t(r+x) − p_t(r−x)) F(x) dx|² = 2 (H_t F(−r) − H_t F(r))²
    values = initial_profile(m, grid.nodes)
    left, right = heat_convolve(values, grid, t, np.array([-r, r]))
    return 2.0 * (left - right) ** 2


def compute_K5_K6(m: ModelSpec, grid: SpaceTimeGrid, w: WeightParams,
                  t_min: float, T: float) -> Tuple[float, float]:
    """
    K₅, K₆ tels que 2|∫ (p_t(r+x) − p_t(r−x))F(x) dx|² ≤ (K₅ + K₆ e^{2β₀r})/t
    sur les échelles t ∈ [t_min, T] et r ∈ [dx, x_max).
    """
    ts = _time_ladder(t_min, T)
    rs = np.geomspace(grid.dx, 0.95 * min(abs(grid.x_min), grid.x_max), 12)
    K6 = 0.0
    for t in ts:
        for r in rs:
            K6 = max(K6, t * _initial_forcing(m, grid, t, r) / np.exp(2.0 * w.beta0 * r))
    K5 = max(float(max(t * _initial_forcing(m, grid, t, grid.dx) for t in ts)), 1e-12)
    return float(K5), float(K6)


def _ptilde_sq(tau: float, r: float, lam: float) -> float:
    """∫ (p_τ(r+x) − p_τ(r−x))² e^{λ|x|} dx"""
    diag = 2.0 * weighted_gaussian_mass(r, tau / 2.0, lam) / np.sqrt(4.0 * np.pi * tau)
    cross = np.exp(-r * r / tau) * np.sqrt(np.pi * tau) * weighted_gaussian_mass(0.0, tau / 2.0, lam) / (2.0 * np.pi * tau)
    return float(max(diag - 2.0 * cross, 0.0))


def compute_K9(w: WeightParams, grid: SpaceTimeGrid, t_min: float, T: float) -> float:
    """
    K₉ = 2 sup_{τ,r} √τ ∫ P̃(τ,r,x)² e^{3β₁|x|} dx / (1 + e^{3β₁r}),
    de sorte que ∫₀^t ∫ P̃² e^{3β₁|x|} ≤ K₉ √t (1 + e^{3β₁r}).
    """
    lam = 3.0 * w.beta1
    rs = np.geomspace(grid.dx, 0.95 * min(abs(grid.x_min), grid.x_max), 12)
    best = 0.0
    for tau in _time_ladder(t_min, T):
        for r in rs:
            best = max(best, np.sqrt(tau) * _ptilde_sq(tau, r, lam) / (1.0 + np.exp(lam * r)))
    return float(2.0 * best)


def deterministic_moment(m: ModelSpec, grid: SpaceTimeGrid, w: WeightParams,
                         horizon: float = 1.0) -> float:
    """Repli sans Monte Carlo : sup_s ∫ (H_s F)² e^{-2β₁|x|} dx sur quelques instants"""
    x = grid.nodes
    weight = np.exp(-2.0 * w.beta1 * np.abs(x))
    values = initial_profile(m, x)
    best = float(trapezoid(values ** 2 * weight, x))
    for s in np.linspace(0.0, horizon, 5)[1:]:
        best = max(best, float(trapezoid(heat_convolve(values, grid, s) ** 2 * weight, x)))
    return best


def build_constants(m: ModelSpec, grid: SpaceTimeGrid, w: WeightParams, T: float,
                    k: int = 4, t_min: Optional[float] = None, delta: float = 0.1,
                    M: Optional[float] = None, overrides: Optional[Mapping[str, float]] = None,
                    cfg: Optional[SolverConfig] = None, moment_replicas: int = 0,
                    seed: int = 0, workers: int = 1, K: float = 1.0) -> BoundConstants:
    """
    Construit le registre des constantes ; chaque valeur peut être imposée par overrides.
    M est estimé par Monte Carlo si moment_replicas > 0, sinon par le flot de la chaleur.
    """
    overrides = dict(overrides or {})
    t_min = grid.dt if t_min is None else float(t_min)
    T_eff = max(T, t_min)
    y_max = 0.95 * min(abs(grid.x_min), grid.x_max)
    provenance: Dict[str, str] = {}

    def pick(name: str, compute):
        if name in overrides:
            provenance[name] = "user_supplied"
            return float(overrides[name])
        provenance[name] = "computed"
        return float(compute())

    K1 = pick("K1", lambda: growth_constant(m, grid, w))
    K2 = pick("K2", lambda: compute_K2(T_eff, w, y_max=min(y_max, 4.0)))
    C1 = pick("C1", lambda: K1 * K2 / np.sqrt(2.0 * np.pi))
    K3 = pick("K3", lambda: compute_K3(w, t_min, T_eff, y_max))
    K4 = pick("K4", lambda: compute_K4(w, t_min, T_eff, y_max))
    if M is not None and "M" not in overrides:
        overrides["M"] = M
    if "M" in overrides:
        M_value = pick("M", lambda: 0.0)
    elif moment_replicas > 0:
        solver_cfg = (cfg or SolverConfig()).model_copy(update={"weights": w})
        M_value = pick("M", lambda: estimate_moment_constant(m, solver_cfg, grid, moment_replicas, seed, workers))
        provenance["M"] = "monte_carlo"
    else:
        M_value = pick("M", lambda: deterministic_moment(m, grid, w))
        provenance["M"] = "heat_flow_fallback"
    K5K6 = None
    if "K5" not in overrides or "K6" not in overrides:
        K5K6 = compute_K5_K6(m, grid, w, t_min, T_eff)
    K5 = pick("K5", lambda: K5K6[0])
    K6 = pick("K6", lambda: K5K6[1])
    K9 = pick("K9", lambda: compute_K9(w, grid, t_min, T_eff))
    C2 = pick("C2", lambda: c2_coefficient(K3, K4, M_value, k))
    C3 = pick("C3", lambda: w.C3)
    C4 = pick("C4", lambda: w.C4)
    C5 = pick("C5", lambda: w.C5)
    K_mean = pick("K", lambda: K)

    constants = BoundConstants(
        K1=K1, K2=K2, C1=C1, C2=C2, C3=C3, C4=C4, C5=C5, K3=K3, K4=K4, K5=K5, K6=K6,
        K9=K9, K=K_mean, k=k, M=M_value, delta=delta, t_min=t_min,
        overridden=frozenset(overrides), provenance=provenance,
    )
    logger.info(
        f"✅ Constantes : C1={C1:.4g} C2={C2:.4g} K5={K5:.3g} K6={K6:.3g} K9={K9:.3g} M={M_value:.4g}"
    )
    return constants


def eval_J(r: float, epsilon: float, T: float, c: BoundConstants) -> BoundResult:
    """
    J(r,ε,T) : sup sur t ∈ [t_min, T] restreint à r√t > C₁C₄ ; le dénominateur
    croît en t, le sup est donc atteint en t_min. Triviale (1, drapeau levé) si
    aucun t de la fenêtre ne vérifie r√t > C₁C₄. Si seul le bord t_min échoue,
    le sup restreint est infini : valeur 1 sans drapeau.

    Raises:
        ValueError: si T ≤ 0
    """
    if T <= 0:
        raise ValueError(f"T={T} doit être > 0")
    label = f"J(r={r:g}, eps={epsilon:g}, T={T:g}, k={c.k})"
    if epsilon == 0:
        return BoundResult(value=0.0, trivial=False, label=label)
    if r * math.sqrt(max(T, c.t_min)) <= c.C1 * c.C4:
        return BoundResult(value=1.0, trivial=True, label=label)
    denom = r * math.sqrt(c.t_min) - c.C1 * c.C4
    if denom <= 0:
        return BoundResult(value=1.0, trivial=False, label=label)
    value = 8 * c.k * math.sqrt(epsilon) * c.C2 ** (1.0 / c.k) * c.C3 * math.sqrt(T) / (denom * (c.k - 1))
    return BoundResult(value=min(1.0, value), trivial=False, label=label)


def optimize_k(r: float, epsilon: float, T: float, c: BoundConstants,
               k_max: int = 32) -> Tuple[int, BoundResult]:
    """k* ∈ {4, 8, …, k_max} minimisant J"""
    if k_max < 4:
        raise ValueError(f"k_max={k_max} doit être ≥ 4")
    best_k, best = 4, eval_J(r, epsilon, T, c.with_k(4))
    for k in range(8, k_max + 1, 4):
        result = eval_J(r, epsilon, T, c.with_k(k))
        if result.value < best.value:
            best_k, best = k, result
    return best_k, best


def population_norm_bound(r: float, epsilon: float, T: float, grid: SpaceTimeGrid,
                          c: BoundConstants) -> BoundResult:
    """P(sup ‖μ_t‖_β ≥ r) ≤ J(r²/N₁, ε, T), N₁ = longueur du domaine tronqué"""
    n1 = grid.x_max - grid.x_min
    result = eval_J(r * r / n1, epsilon, T, c)
    return result.model_copy(update={"label": f"J(r^2/N1={r * r / n1:g}, eps={epsilon:g}, T={T:g})"})


def _exponent(rate: RateValue, epsilon: float, delta: float) -> float:
    if math.isinf(rate.value):
        return math.inf
    gap = rate.value - delta
    if epsilon <= 0:
        return math.inf if gap > 0 else (0.0 if gap == 0 else -math.inf)
    return gap / epsilon


def thm1_lower(rate_inf: RateLike, epsilon: float, delta: float) -> float:
    """exp(−(inf I − δ)/ε) ramené dans [0, 1] ; taux infini → 0"""
    x = _exponent(as_rate(rate_inf), epsilon, delta)
    if math.isinf(x):
        return 0.0 if x > 0 else 1.0
    return float(min(1.0, max(0.0, math.exp(-x))))


def thm1_mean_bound(rate_inf: RateLike, epsilon: float, delta: float) -> float:
    """
    E[τ] ≤ 1/(1 − exp(−(inf I − δ)/ε)).

    Raises:
        VacuousBoundError: si inf I ≤ δ (série géométrique divergente)
    """
    rate = as_rate(rate_inf)
    if rate.value <= delta:
        raise VacuousBoundError(f"inf I = {rate.value:g} ≤ δ = {delta:g}")
    x = _exponent(rate, epsilon, delta)
    if math.isinf(x):
        return 1.0
    return float(1.0 / (-math.expm1(-x)))


class AttractionBounds(BaseModel):
    lower: float
    upper: float
    mean_upper: float
    lower_trivial: bool = False
    upper_trivial: bool = False


def thm2_bounds(r: float, delta0: float, epsilon: float, T: float, rate_inf_ann: RateLike,
                c: BoundConstants) -> AttractionBounds:
    """
    Encadrement à point attractif :
    lower = 1 − J(δ₀), upper = J(r) + exp(−(inf_{(−δ₀,δ₀)^c} I − δ)/ε),
    mean_upper = 1/(1 − exp(−(inf I − δ)/ε)).
    """
    if not 0 < delta0 < r:
        raise ValueError(f"0 < delta0 < r requis (reçu {delta0}, {r})")
    rate = as_rate(rate_inf_ann)
    j_delta = eval_J(delta0, epsilon, T, c)
    j_r = eval_J(r, epsilon, T, c)
    lower = 0.0 if j_delta.trivial else max(0.0, 1.0 - j_delta.value)
    upper = min(1.0, j_r.value + thm1_lower(rate, epsilon, c.delta))
    mean_upper = thm1_mean_bound(rate, epsilon, c.delta)
    return AttractionBounds(lower=lower, upper=upper, mean_upper=mean_upper,
                            lower_trivial=lower == 0.0, upper_trivial=upper >= 1.0)


def eval_N2(r: float, epsilon: float, T: float, w: WeightParams, c: BoundConstants) -> BoundResult:
    """
    N₂ = (1 − (K₅ + K₆e^{2β₀r})/t_min) / (K₉ √(εT) (1 + e^{3β₁r})) ; négatif → sans contenu
    """
    inner = 1.0 - (c.K5 + c.K6 * math.exp(2.0 * w.beta0 * abs(r))) / c.t_min
    label = f"N2(r={r:g}, eps={epsilon:g}, T={T:g})"
    if epsilon * T <= 0:
        value = math.inf if inner > 0 else -math.inf
    else:
        value = inner / (c.K9 * math.sqrt(epsilon * T) * (1.0 + math.exp(3.0 * w.beta1 * abs(r))))
    return BoundResult(value=value, trivial=not value > 0, label=label)


def thm3_exit_bound(r: float, epsilon: float, T: float, w: WeightParams,
                    c: BoundConstants) -> BoundResult:
    """sup_t 8k ε^{1/2} C₂^{1/k} √T / ((√(N₂ t) − C₁C₅)(k−1)), évalué en t_min"""
    label = f"thm3(r={r:g}, eps={epsilon:g}, T={T:g}, k={c.k})"
    if epsilon == 0:
        return BoundResult(value=0.0, trivial=False, label=label)
    n2 = eval_N2(r, epsilon, T, w, c)
    if n2.trivial:
        return BoundResult(value=1.0, trivial=True, label=label)
    denom = math.sqrt(n2.value * c.t_min) - c.C1 * c.C5
    if denom <= 0:
        return BoundResult(value=1.0, trivial=True, label=label)
    value = 8 * c.k * math.sqrt(epsilon) * c.C2 ** (1.0 / c.k) * math.sqrt(T) / (denom * (c.k - 1))
    return BoundResult(value=min(1.0, value), trivial=False, label=label)


def mean_size_rhs(t: float, epsilon: float, w: WeightParams, c: BoundConstants) -> BoundResult:
    """
    M(t²+t³)(Kβ⁶+Kβ⁴−Kβ²) + ln t + K(β−β₀)²(t+1) + KMε(√t + t^{3/2}) ;
    une valeur négative est signalée comme sans contenu.
    """
    if t <= 0:
        raise ValueError(f"t={t} doit être > 0")
    K, M, b = c.K, c.M, w.beta
    value = (M * (t ** 2 + t ** 3) * (K * b ** 6 + K * b ** 4 - K * b ** 2)
             + math.log(t)
             + K * (b - w.beta0) ** 2 * (t + 1)
             + K * M * epsilon * (math.sqrt(t) + t ** 1.5))
    return BoundResult(value=value, trivial=value < 0, label=f"mean_size(t={t:g})")


def upperbound_survival(T: float, rate_inf: RateLike, epsilon: float, delta: float) -> float:
    """
    P(τ > T) ≤ exp(−⌊T⌋(inf I − δ)/ε).

    Raises:
        VacuousBoundError: si inf I ≤ δ
    """
    rate = as_rate(rate_inf)
    if rate.value <= delta:
        raise VacuousBoundError(f"inf I = {rate.value:g} ≤ δ = {delta:g}")
    whole = math.floor(T)
    if whole == 0:
        return 1.0
    x = _exponent(rate, epsilon, delta)
    return 0.0 if math.isinf(x) else float(math.exp(-whole * x))
