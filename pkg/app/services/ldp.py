"""
Grandes déviations - équation de squelette et fonctionnelles de taux
====================================================================
- skeleton_solve : u̇ = ½Δu + ∫_U G(a,y,u) h(a) λ(da)
- rate_spde      : ½‖h‖²_{L²}
- rate_measure   : ½ ∫∫ |(μ̇ − ½Δ*μ)/μ|² dμ dt avec contrôles de Cameron–Martin
- ldp_scaling_scan : tableau (ε, p̂, ε log p̂) pour ε décroissant
Les infima obtenus sur des trajectoires candidates sont étiquetés « candidate infimum ».
"""
from dataclasses import dataclass
from typing import Dict, Literal, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field as PydanticField
from scipy.integrate import trapezoid
from scipy.optimize import brentq
from scipy.stats import norm

from ..config import settings
from .bounds import RateValue
from .errors import GridMismatchError, RateEvaluationError
from .exit_times import ExitMode, ExitSpec, mc_exit, outside_mass
from .models import ModelKind, ModelSpec, initial_field
from .solver import PathRecord, SolverConfig, solve_path
from .weighted_space import MeasurePath, SpaceTimeGrid

logger = logging.getLogger(__name__)

_SUPPORT_ITERATIONS = 8


@dataclass(frozen=True)
class ControlFunction:
    """Contrôle h : tableau (temps × a) pour l'EDPS, ou (temps × y) comme dérive"""
    values: np.ndarray
    grid: SpaceTimeGrid
    axis: Literal["a", "y"] = "a"

    def __post_init__(self):
        values = np.atleast_2d(np.array(self.values, dtype=float))
        width = self.grid.na if self.axis == "a" else self.grid.nx
        if values.shape != (self.grid.nt, width):
            raise GridMismatchError(
                f"Contrôle {values.shape} incompatible avec ({self.grid.nt}, {width})"
            )
        if not np.all(np.isfinite(values)):
            raise RateEvaluationError("Contrôle non fini")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def cell_volume(self) -> float:
        width = self.grid.da if self.axis == "a" else self.grid.dx
        return width * self.grid.dt

    def l2_norm_sq(self) -> float:
        return float(np.sum(self.values ** 2) * self.cell_volume)

    def scaled(self, factor: float) -> "ControlFunction":
        return ControlFunction(self.values * factor, self.grid, self.axis)


class RateEvalResult(BaseModel):
    """Valeur du taux, diagnostics de Cameron–Martin et admissibilité"""
    value: float = PydanticField(..., ge=0)
    residuals: Dict[str, float] = PydanticField(default_factory=dict)
    admissible: bool = True


def skeleton_solve(m: ModelSpec, h: ControlFunction, grid: Optional[SpaceTimeGrid] = None,
                   cfg: Optional[SolverConfig] = None) -> PathRecord:
    """Intègre l'équation de squelette avec le schéma du solveur (déterministe)"""
    grid = grid or h.grid
    if h.grid != grid or h.axis != "a":
        raise GridMismatchError("Le contrôle doit vivre sur la grille (temps × a) du solveur")
    cfg = cfg or SolverConfig(epsilon=0.0)
    volume = grid.da * grid.dt
    return solve_path(m, cfg, grid, forcing=lambda n: h.values[n] * volume, epsilon=1.0)


def rate_spde(h: ControlFunction) -> RateEvalResult:
    """½·‖h‖² discret : certificat pour la trajectoire skeleton_solve(h)"""
    return RateEvalResult(value=0.5 * h.l2_norm_sq(), residuals={}, admissible=True)


def _neumann_cell_laplacian(rho: np.ndarray, dx: float) -> np.ndarray:
    padded = np.concatenate([rho[:, :1], rho, rho[:, -1:]], axis=1)
    return (padded[:, 2:] - 2.0 * padded[:, 1:-1] + padded[:, :-2]) / dx ** 2


def rate_measure(path: MeasurePath, model_kind: ModelKind,
                 support: Optional[Tuple[float, float]] = None,
                 floor: Optional[float] = None,
                 constraint_tolerance: float = 1e-3,
                 derivative_limit: float = 1e8,
                 initial_density: Optional[np.ndarray] = None) -> RateEvalResult:
    """
    Taux des modèles de population sur une trajectoire de mesures.

    g = (ρ̇ − ½Δρ)/ρ là où ρ dépasse le plancher (ou sur la fenêtre support),
    valeur ½ ∫∫ g²ρ dy dt par trapèzes en temps. Trajectoire non admissible → ∞.

    Raises:
        RateEvaluationError: densité sous le plancher dans la fenêtre support
    """
    floor = settings.density_floor if floor is None else floor
    grid = path.grid
    rho = np.asarray(path.densities)
    times = np.asarray(path.times)
    dx = grid.dx
    if times.size < 2:
        return RateEvalResult(value=0.0, residuals={}, admissible=True)

    centers = grid.cell_centers
    if support is not None:
        window = (centers >= support[0]) & (centers <= support[1])
        if np.any(rho[:, window] < floor):
            raise RateEvaluationError(
                f"Densité sous le plancher {floor:g} dans la fenêtre {support}"
            )
        mask = np.broadcast_to(window, rho.shape) & (rho > 0)
    else:
        mask = rho > floor

    rho_dot = np.gradient(rho, times, axis=0, edge_order=2 if times.size >= 3 else 1)
    numerator = rho_dot - 0.5 * _neumann_cell_laplacian(rho, dx)
    safe = np.where(mask, rho, 1.0)
    g = np.where(mask, numerator / safe, 0.0)

    per_time = np.sum(g * g * rho, axis=1) * dx
    value = 0.5 * float(trapezoid(per_time, times))

    masses = rho.sum(axis=1) * dx
    dropped = np.where(mask, 0.0, rho).sum(axis=1) * dx
    residuals = {
        "dropped_mass_fraction": float(np.max(dropped / np.where(masses > 0, masses, 1.0))),
        "time_derivative_sup": float(np.max(np.abs(rho_dot).sum(axis=1) * dx)),
    }
    admissible = bool(np.isfinite(value)) and residuals["time_derivative_sup"] <= derivative_limit

    if model_kind == ModelKind.FVP:
        pairing = np.sum(g * rho, axis=1) * dx
        residuals["fvp_pairing_sup"] = float(np.max(np.abs(pairing)))
        residuals["fvp_mass_defect"] = float(np.max(np.abs(masses - 1.0)))
        admissible = (admissible and residuals["fvp_pairing_sup"] <= constraint_tolerance
                      and residuals["fvp_mass_defect"] <= constraint_tolerance)

    if initial_density is not None:
        start = float(np.max(np.abs(rho[0] - np.asarray(initial_density))) * dx)
        residuals["initial_mismatch"] = start
        admissible = admissible and start <= constraint_tolerance

    if not admissible:
        logger.warning(f"⚠️ Trajectoire hors de l'espace de Cameron–Martin : {residuals}")
        return RateEvalResult(value=math.inf, residuals=residuals, admissible=False)
    return RateEvalResult(value=value, residuals=residuals, admissible=True)


def path_to_measure(path: PathRecord) -> MeasurePath:
    """Trajectoire de champs cumulatifs → trajectoire de mesures"""
    return MeasurePath.from_fields(path.fields)


def control_profile(m: ModelSpec, grid: SpaceTimeGrid,
                    support: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """
    Profil unitaire en a de la famille de contrôles candidats.
    SBM : constante sur les cellules a qui rencontrent support (toute la grille sinon).
    """
    a = grid.a_centers
    if m.kind == ModelKind.FVP:
        return np.sqrt(12.0) * (0.5 - a)
    if support is None:
        return np.ones_like(a)
    lo, hi = support
    edges = grid.a_edges
    return ((edges[1:] > lo) & (edges[:-1] < hi)).astype(float)


def _candidate_control(m: ModelSpec, grid: SpaceTimeGrid, T: float, theta: float,
                       support: Optional[Tuple[float, float]] = None) -> ControlFunction:
    active = (np.arange(grid.nt) * grid.dt) < T - 1e-12
    values = np.outer(active.astype(float), control_profile(m, grid, support)) * theta
    return ControlFunction(values, grid)


def _swept_range(values: np.ndarray) -> Tuple[float, float]:
    """Plage [min u, max u] élargie à 0 : seule partie de U vue par le forçage SBM"""
    return min(0.0, float(np.min(values))), max(0.0, float(np.max(values)))


def _candidate_path(m: ModelSpec, grid: SpaceTimeGrid, cfg: SolverConfig, T: float,
                    theta: float) -> Tuple[PathRecord, ControlFunction]:
    """
    Trajectoire de squelette du contrôle candidat θ.
    Pour SBM, le support du contrôle est la plage balayée par u, obtenue par point fixe.
    """
    if m.kind != ModelKind.SBM:
        h = _candidate_control(m, grid, T, theta)
        return skeleton_solve(m, h, grid, cfg), h
    support = _swept_range(initial_field(m, grid).values)
    mask = control_profile(m, grid, support)
    for _ in range(_SUPPORT_ITERATIONS):
        h = _candidate_control(m, grid, T, theta, support)
        path = skeleton_solve(m, h, grid, cfg)
        lo, hi = _swept_range(np.concatenate([f.values for f in path.fields]))
        support = (min(support[0], lo), max(support[1], hi))
        widened = control_profile(m, grid, support)
        if np.array_equal(widened, mask):
            return path, h
        mask = widened
    logger.warning(f"⚠️ Support du contrôle candidat non stabilisé (θ={theta:.4g})")
    return path, h


def _exit_margin(path: PathRecord, spec: ExitSpec, level: float) -> float:
    if spec.mode == ExitMode.POPULATION_EXIT:
        return max(outside_mass(f, spec.r) for f in path.fields[1:]) - 1.0
    return float(np.max(path.norms[1:])) - level


def candidate_rate_infimum(spec: ExitSpec, m: ModelSpec, grid: SpaceTimeGrid,
                           cfg: Optional[SolverConfig] = None, level: Optional[float] = None,
                           theta_max: float = 64.0) -> RateValue:
    """
    Infimum candidat du taux sur l'ensemble de sortie : plus petite amplitude θ
    d'une famille de contrôles à un paramètre dont la trajectoire de squelette
    atteint le niveau de sortie avant T (recherche de racine scalaire).
    Le taux ne dépend pas de la troncature de la grille auxiliaire tant que u y reste.
    """
    cfg = (cfg or SolverConfig()).model_copy(update={"epsilon": 0.0, "stride": 1})
    level = spec.r if level is None else level
    if grid.nt == 0:
        return RateValue(value=math.inf, provenance="evaluated", candidate=True)

    def margin(theta: float) -> float:
        path, _ = _candidate_path(m, grid, cfg, spec.T, theta)
        return _exit_margin(path, spec, level)

    if margin(0.0) >= 0:
        return RateValue(value=0.0, provenance="evaluated", candidate=True)
    hi = 1.0
    while margin(hi) < 0:
        hi *= 2.0
        if hi > theta_max:
            logger.warning(f"⚠️ Aucun contrôle candidat n'atteint la sortie (θ ≤ {theta_max})")
            return RateValue(value=math.inf, provenance="evaluated", candidate=True)
    theta = brentq(margin, hi / 2.0 if hi > 1.0 else 0.0, hi, xtol=1e-6)
    _, h = _candidate_path(m, grid, cfg, spec.T, theta)
    value = rate_spde(h).value
    logger.info(f"✅ Infimum candidat : θ*={theta:.5f}, taux={value:.5f}")
    return RateValue(value=value, provenance="evaluated", candidate=True)


def ldp_scaling_scan(spec: ExitSpec, m: ModelSpec, cfg: SolverConfig, grid: SpaceTimeGrid,
                     eps_list: Sequence[float], replicas: int, seed: int,
                     workers: int = 1, confidence: float = 0.95) -> pd.DataFrame:
    """
    Pour chaque ε : mc_exit puis (ε, p̂, ε log p̂, IC). Les cellules p̂ = 0 sont
    signalées sous la résolution Monte Carlo.
    """
    eps = [float(e) for e in eps_list]
    if not eps or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError(f"eps_list doit être strictement décroissante et positive : {eps}")
    z = float(norm.ppf(0.5 + confidence / 2.0))
    rows = []
    for e in eps:
        estimate = mc_exit(spec, m, cfg.model_copy(update={"epsilon": e}), grid, replicas, seed, workers)
        p = estimate.p_hat
        below = p == 0.0
        lo = max(p - z * estimate.std_err, 1.0 / (estimate.replicas + 1))
        hi = min(p + z * estimate.std_err, 1.0)
        rows.append({
            "epsilon": e,
            "p_hat": p,
            "std_err": estimate.std_err,
            "eps_log_p": math.nan if below else e * math.log(p),
            "ci_low": math.nan if below else e * math.log(lo),
            "ci_high": math.nan if below else e * math.log(hi),
            "below_resolution": below,
        })
    return pd.DataFrame(rows)


def scaling_trend_ok(table: pd.DataFrame) -> bool:
    """|ε log p̂| monotone aux IC près, ou différences successives décroissantes"""
    rows = table[~table["below_resolution"]]
    if len(rows) < 2:
        return True
    mags = rows["eps_log_p"].abs().to_numpy()
    half = 0.5 * (rows["ci_high"] - rows["ci_low"]).abs().to_numpy()
    steps = np.diff(mags)
    slack = half[1:] + half[:-1]
    monotone = bool(np.all(steps >= -slack) or np.all(steps <= slack))
    diffs = np.abs(steps)
    shrinking = bool(np.all(np.diff(diffs) <= 1e-12)) if diffs.size > 1 else True
    return monotone or shrinking
