"""
Solveur - intégration en temps de la classe d'EDPS et solutions de référence
============================================================================
du = ½Δu dt + √ε ∫_U G(a, y, u) W(da dt)

- Euler–Maruyama explicite (défaut) ou semi-implicite (Crank–Nicolson sur Δ)
- projection monotone optionnelle (maximum courant puis écrêtage)
- flot de la chaleur exact pour l'interpolant affine par morceaux
- résidu de la forme mild avec rejeu du bruit
"""
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField
from scipy import sparse
from scipy.integrate import trapezoid
from scipy.sparse.linalg import factorized
from scipy.stats import norm

from ..config import settings
from .errors import CorruptedStateError, GridMismatchError, ReplayError, StabilityError
from .models import ModelKind, ModelSpec, initial_field, noise_increment
from .noise import NoiseSlice, NoiseStream, sample_slice
from .parallel import map_replicas
from .weighted_space import Field, SpaceTimeGrid, WeightParams, beta_norm, tail_within_tolerance

logger = logging.getLogger(__name__)


class Scheme(str, Enum):
    EXPLICIT_EM = "explicit_em"
    SEMI_IMPLICIT_EM = "semi_implicit_em"


class Projection(str, Enum):
    NONE = "none"
    MONOTONE_CLAMP = "monotone_clamp"


class Boundary(str, Enum):
    NEUMANN = "neumann"
    PERIODIC = "periodic"


class SolverConfig(BaseModel):
    """Intensité du bruit ε, schéma, projection et tolérances"""
    model_config = ConfigDict(frozen=True)

    epsilon: float = PydanticField(0.1, ge=0, description="Intensité du bruit ε")
    scheme: Scheme = Scheme.EXPLICIT_EM
    projection: Projection = Projection.NONE
    boundary: Boundary = Boundary.NEUMANN
    tail_tolerance: float = PydanticField(default_factory=lambda: settings.tail_tolerance)
    stability_limit: float = PydanticField(default_factory=lambda: settings.stability_limit)
    weights: WeightParams = WeightParams()
    stride: int = PydanticField(1, ge=1, description="Pas de stockage des champs")


class PathObserver(Protocol):
    """Détecteur branché sur la boucle de solve_path"""
    name: str
    fired_at: Optional[float]

    def observe(self, step: int, field: Field, norm_value: float) -> None: ...


@dataclass
class PathRecord:
    """Trajectoire u_t(·) : champs (éventuellement espacés), normes à chaque pas, sorties"""
    grid: SpaceTimeGrid
    fields: List[Field]
    norms: np.ndarray
    norm_times: np.ndarray
    exits: Dict[str, Optional[float]] = field(default_factory=dict)
    seed: Optional[int] = None
    replica_id: int = 0
    stride: int = 1
    epsilon: float = 0.0
    projection_total: float = 0.0
    tail_warnings: int = 0
    steps_taken: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([f.time for f in self.fields])

    @property
    def final(self) -> Field:
        return self.fields[-1]


def laplacian(values: np.ndarray, dx: float, boundary: Boundary = Boundary.NEUMANN) -> np.ndarray:
    """
    Différence centrée seconde.

    Neumann : flux nul de la densité, les nœuds extrêmes de u ne diffusent pas.
    Périodique : anneau des nx+1 nœuds.
    """
    if boundary == Boundary.PERIODIC:
        return (np.roll(values, -1) - 2.0 * values + np.roll(values, 1)) / dx ** 2
    out = np.zeros_like(values)
    out[1:-1] = (values[2:] - 2.0 * values[1:-1] + values[:-2]) / dx ** 2
    return out


def _laplacian_matrix(n: int, dx: float, boundary: Boundary) -> sparse.csr_matrix:
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    lap = sparse.diags([off, main, off], [-1, 0, 1], format="lil")
    if boundary == Boundary.PERIODIC:
        lap[0, n - 1] = 1.0
        lap[n - 1, 0] = 1.0
    else:
        lap[0, :] = 0.0
        lap[n - 1, :] = 0.0
    return (lap / dx ** 2).tocsr()


@lru_cache(maxsize=32)
def _crank_nicolson(n: int, dx: float, dt: float, boundary: Boundary):
    lap = _laplacian_matrix(n, dx, boundary)
    eye = sparse.identity(n, format="csc")
    lhs = (eye - 0.25 * dt * lap).tocsc()
    rhs = (eye + 0.25 * dt * lap).tocsr()
    return factorized(lhs), rhs


def _project(values: np.ndarray, m: ModelSpec) -> np.ndarray:
    projected = np.maximum.accumulate(values)
    if m.kind == ModelKind.FVP:
        projected = np.clip(projected, 0.0, 1.0)
    return projected


def _check_stability(grid: SpaceTimeGrid, cfg: SolverConfig) -> None:
    if cfg.scheme == Scheme.EXPLICIT_EM and grid.nt > 0 and grid.stability_ratio > cfg.stability_limit:
        raise StabilityError(
            f"dt/dx² = {grid.stability_ratio:.4f} > {cfg.stability_limit} (schéma explicite)"
        )


def _advance(values: np.ndarray, m: ModelSpec, cfg: SolverConfig, grid: SpaceTimeGrid,
             increments: Optional[np.ndarray], epsilon: float,
             strict: bool = True) -> Tuple[np.ndarray, float]:
    dt, dx = grid.dt, grid.dx
    stochastic = 0.0
    if increments is not None and epsilon > 0:
        stochastic = np.sqrt(epsilon) * noise_increment(m, values, grid, increments, strict)

    if cfg.scheme == Scheme.SEMI_IMPLICIT_EM:
        solve, rhs = _crank_nicolson(values.size, dx, dt, cfg.boundary)
        new = solve(rhs @ values + stochastic)
    else:
        new = values + 0.5 * dt * laplacian(values, dx, cfg.boundary) + stochastic

    if not np.all(np.isfinite(new)):
        raise CorruptedStateError("Valeurs non finies après un pas de temps")

    magnitude = 0.0
    if cfg.projection == Projection.MONOTONE_CLAMP:
        projected = _project(new, m)
        magnitude = float(np.max(np.abs(projected - new)))
        new = projected
    return new, magnitude


def step(u: Field, m: ModelSpec, cfg: SolverConfig, noise: Optional[NoiseSlice]) -> Field:
    """
    Un pas u + ½Δ_h u·dt + √ε Σ_a G(a,y,u)ΔW(a), tranche ΔW partagée par tous les y.

    Raises:
        StabilityError: dt/dx² au-delà de la limite (schéma explicite)
        NoiseRangeError: masse SBM hors de la grille auxiliaire
    """
    grid = u.grid
    _check_stability(grid, cfg)
    increments = None if noise is None else noise.increments
    values, magnitude = _advance(u.values, m, cfg, grid, increments, cfg.epsilon)
    if magnitude > settings.monotone_tolerance:
        logger.debug(f"Projection monotone d'amplitude {magnitude:.3e} à t={u.time + grid.dt:.4f}")
    return Field(values=values, grid=grid, time=u.time + grid.dt)


def _check_model_grid(m: ModelSpec, grid: SpaceTimeGrid) -> None:
    if m.kind == ModelKind.FVP and (abs(grid.a_min) > 1e-12 or abs(grid.a_max - 1.0) > 1e-12):
        raise GridMismatchError(f"FVP exige a ∈ [0,1] (reçu [{grid.a_min}, {grid.a_max}])")


Forcing = Callable[[int], np.ndarray]


def solve_path(m: ModelSpec, cfg: SolverConfig, grid: SpaceTimeGrid,
               stream: Optional[NoiseStream] = None,
               observers: Sequence[PathObserver] = (),
               initial: Optional[Field] = None,
               n_steps: Optional[int] = None,
               forcing: Optional[Forcing] = None,
               epsilon: Optional[float] = None) -> PathRecord:
    """
    Intègre nt pas (ou n_steps) et s'arrête dès que tous les observateurs ont détecté.

    forcing(n) remplace la tranche de bruit du pas n (équation de squelette).
    """
    _check_model_grid(m, grid)
    _check_stability(grid, cfg)
    eps = cfg.epsilon if epsilon is None else epsilon
    steps = grid.nt if n_steps is None else min(int(n_steps), grid.nt)
    w = cfg.weights

    u0 = initial if initial is not None else initial_field(m, grid)
    values = np.array(u0.values)
    fields = [u0]
    norms = [beta_norm(u0, w)]
    norm_times = [0.0]
    projection_total = 0.0
    tail_warnings = 0 if tail_within_tolerance(u0, w, cfg.tail_tolerance, log=False) else 1

    taken = 0
    for n in range(steps):
        increments = None
        if forcing is not None:
            increments = forcing(n)
        elif stream is not None and eps > 0:
            increments = sample_slice(stream, grid, n).increments
        values, magnitude = _advance(values, m, cfg, grid, increments, eps, strict=forcing is None)
        projection_total += magnitude
        taken = n + 1
        t = taken * grid.dt
        current = Field(values=values, grid=grid, time=t)
        current_norm = beta_norm(current, w)
        norms.append(current_norm)
        norm_times.append(t)
        if not tail_within_tolerance(current, w, cfg.tail_tolerance, log=False):
            tail_warnings += 1
        if taken % cfg.stride == 0:
            fields.append(current)
        stop = False
        if observers:
            for obs in observers:
                if obs.fired_at is None:
                    obs.observe(taken, current, current_norm)
            stop = all(obs.fired_at is not None for obs in observers)
        if stop:
            break

    if taken > 0 and fields[-1].time != taken * grid.dt:
        fields.append(Field(values=values, grid=grid, time=taken * grid.dt))
    if tail_warnings:
        logger.warning(f"⚠️ Tolérance de queue dépassée sur {tail_warnings} pas")
    if projection_total > settings.monotone_tolerance:
        logger.info(f"Projection monotone cumulée : {projection_total:.3e}")

    return PathRecord(
        grid=grid,
        fields=fields,
        norms=np.array(norms),
        norm_times=np.array(norm_times),
        exits={obs.name: obs.fired_at for obs in observers},
        seed=None if stream is None else stream.seed,
        replica_id=0 if stream is None else stream.replica_id,
        stride=cfg.stride,
        epsilon=eps,
        projection_total=projection_total,
        tail_warnings=tail_warnings,
        steps_taken=taken,
    )


def _heat_weights(nodes: np.ndarray, points: np.ndarray, t: float) -> np.ndarray:
    # convolution exacte de l'interpolant affine (prolongé par constantes) avec p_t
    sq = np.sqrt(t)
    dx = np.diff(nodes)
    z = (nodes[None, :] - points[:, None]) / sq
    cdf = norm.cdf(z)
    pdf = norm.pdf(z)
    d_cdf = cdf[:, 1:] - cdf[:, :-1]
    d_pdf = pdf[:, :-1] - pdf[:, 1:]
    c = ((points[:, None] - nodes[None, :-1]) * d_cdf + sq * d_pdf) / dx[None, :]
    weights = np.zeros((points.size, nodes.size))
    weights[:, :-1] += d_cdf - c
    weights[:, 1:] += c
    weights[:, 0] += cdf[:, 0]
    weights[:, -1] += 1.0 - cdf[:, -1]
    return weights


@lru_cache(maxsize=64)
def _heat_matrix(grid: SpaceTimeGrid, t: float) -> np.ndarray:
    nodes = grid.nodes
    return _heat_weights(nodes, nodes, t)


def heat_convolve(values: np.ndarray, grid: SpaceTimeGrid, t: float,
                  points: Optional[np.ndarray] = None) -> np.ndarray:
    """∫ p_t(y−x) F(x) dx pour F donnée aux nœuds, évaluée aux nœuds ou en des points"""
    if t <= 0:
        raise ValueError(f"t={t} doit être > 0")
    values = np.asarray(values, dtype=float)
    if points is None:
        return _heat_matrix(grid, float(t)) @ values
    return _heat_weights(grid.nodes, np.atleast_1d(np.asarray(points, dtype=float)), t) @ values


def heat_flow(F: Union[Callable, Field, np.ndarray], t: float, grid: SpaceTimeGrid) -> Field:
    """
    Flot de la chaleur ∫ p_t(y−x) F(x) dx, p_t(x) = (2πt)^{-1/2} e^{-x²/2t},
    par intégration exacte de l'interpolant de F sur la grille.
    """
    if isinstance(F, Field):
        values = F.values
    elif callable(F):
        values = np.asarray(F(grid.nodes), dtype=float)
    else:
        values = np.asarray(F, dtype=float)
    return Field(values=heat_convolve(values, grid, t), grid=grid, time=t)


def mild_residual(path: PathRecord, m: ModelSpec, cfg: SolverConfig) -> float:
    """
    Écart entre les champs stockés et la forme mild recalculée :
    H(t_n)F + √ε Σ_m H(t_n − t_{m+1}) S_m, S_m = incrément de bruit rejoué au pas m.

    Retourne le max sur les temps de la norme sup pondérée de l'écart.

    Raises:
        ReplayError: trajectoire espacée ou sans graine
    """
    if path.steps_taken == 0:
        return 0.0
    if path.stride != 1 or len(path.fields) != path.steps_taken + 1:
        raise ReplayError("Le rejeu exige une trajectoire complète (stride=1)")
    eps = path.epsilon
    if eps > 0 and path.seed is None:
        raise ReplayError("Graine de rejeu absente")

    grid = path.grid
    n_total = path.steps_taken
    u0 = path.fields[0].values
    stacked = np.vstack([f.values for f in path.fields])

    stochastic = np.zeros_like(stacked)
    if eps > 0:
        stream = NoiseStream(path.seed, path.replica_id)
        sources = np.vstack([
            noise_increment(m, stacked[k], grid, sample_slice(stream, grid, k).increments)
            for k in range(n_total)
        ]).T
        # contribution du pas k au temps n : H((n−k−1)dt) S_k, retard nul = identité
        for lag in range(n_total):
            count = n_total - lag
            block = sources[:, :count]
            if lag > 0:
                block = _heat_matrix(grid, lag * grid.dt) @ block
            stochastic[lag + 1:lag + 1 + count] += np.sqrt(eps) * block.T

    weights = np.exp(-cfg.weights.beta * np.abs(grid.nodes))
    worst = 0.0
    for n in range(1, n_total + 1):
        mild = heat_convolve(u0, grid, n * grid.dt) + stochastic[n]
        worst = max(worst, float(np.max(weights * np.abs(stacked[n] - mild))))
    logger.info(f"Résidu mild : {worst:.3e} sur {n_total} pas")
    return worst


class MomentObserver:
    """Suit sup_s ∫ u_s² e^{-2β₁|x|} dx le long d'une trajectoire"""
    name = "moment"

    def __init__(self, beta1: float, horizon: float):
        self.beta1 = beta1
        self.horizon = horizon
        self.fired_at: Optional[float] = None
        self.running_max = 0.0

    def update(self, field: Field) -> None:
        x = field.grid.nodes
        value = float(trapezoid(field.values ** 2 * np.exp(-2.0 * self.beta1 * np.abs(x)), x))
        self.running_max = max(self.running_max, value)

    def observe(self, step: int, field: Field, norm_value: float) -> None:
        if field.time <= self.horizon + 1e-12:
            self.update(field)


def _moment_task(payload) -> float:
    m, cfg, grid, seed, replica_id, n_steps, horizon = payload
    observer = MomentObserver(cfg.weights.beta1, horizon)
    observer.update(initial_field(m, grid))
    solve_path(m, cfg, grid, NoiseStream(seed, replica_id), [observer], n_steps=n_steps)
    return observer.running_max


def estimate_moment_constant(m: ModelSpec, cfg: SolverConfig, grid: SpaceTimeGrid,
                             replicas: int, seed: int, workers: int = 1,
                             horizon: float = 1.0) -> float:
    """Estimation Monte Carlo de M = E sup_{s≤1} ∫ u_s² e^{-2β₁|x|} dx"""
    if replicas < 1:
        raise ValueError("replicas doit être ≥ 1")
    n_steps = int(np.ceil(min(horizon, grid.t_end) / grid.dt - 1e-9))
    payloads = [(m, cfg, grid, seed, r, n_steps, horizon) for r in range(replicas)]
    values = map_replicas(_moment_task, payloads, workers)
    estimate = float(np.mean(values))
    logger.info(f"✅ Constante de moment M ≈ {estimate:.4f} ({replicas} réplicas)")
    return estimate
