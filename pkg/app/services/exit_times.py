"""
Temps de sortie - détection des temps d'arrêt et estimation Monte Carlo
=======================================================================
τ  = inf{t > 0 : ‖u_t‖_β ≥ r}                      (sortie en norme)
τ  = inf{t > 0 : μ_t((−r,r)^c) ≥ 1}                (sortie de population)
τ₁ = inf{t > 0 : ‖u_t‖_β < δ₀}                      (atteinte du voisinage attractif)
Le temps détecté est le premier temps de grille où la condition est vraie.
"""
from enum import Enum
from typing import Dict, Optional, Union
import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field as PydanticField, model_validator

from .errors import GridMismatchError, SimulationError
from .models import ModelSpec
from .noise import NoiseStream
from .parallel import map_replicas
from .solver import SolverConfig, solve_path
from .weighted_space import Field, MeasureSlice, SpaceTimeGrid, WeightParams, beta_norm, prefix_sum

logger = logging.getLogger(__name__)

_TIME_SLACK = 1e-12


class ExitMode(str, Enum):
    NORM_EXIT = "norm_exit"
    POPULATION_EXIT = "population_exit"
    HITTING = "hitting"


class ExitSpec(BaseModel):
    """Domaine (−r, r), voisinage attractif δ₀ et échéance T"""
    model_config = ConfigDict(frozen=True)

    r: float = PydanticField(..., gt=0)
    delta0: float = PydanticField(0.05, gt=0)
    T: float = PydanticField(..., gt=0)
    mode: ExitMode = ExitMode.NORM_EXIT

    @model_validator(mode="after")
    def _check_radii(self) -> "ExitSpec":
        if not self.delta0 < self.r:
            raise ValueError(f"delta0 < r requis (reçu {self.delta0}, {self.r})")
        return self


class ExitEstimate(BaseModel):
    """P̂(τ ≤ T), erreur standard et moyenne censurée de τ ∧ T"""
    p_hat: float
    std_err: float
    replicas: int
    mean_tau_censored: float
    censor_fraction: float
    failed_replicas: int = 0
    detected: int = 0

    @property
    def ci(self) -> tuple:
        return (max(0.0, self.p_hat - 2 * self.std_err), min(1.0, self.p_hat + 2 * self.std_err))


def detect_norm_exit(step_field: Field, spec: ExitSpec, w: WeightParams) -> Optional[float]:
    if step_field.time <= 0:
        return None
    return step_field.time if beta_norm(step_field, w) >= spec.r else None


def outside_mass(u: Union[Field, MeasureSlice], r: float) -> float:
    """μ((−∞,−r) ∪ (r,∞)) = u(−r) − u(x_min) + u(x_max) − u(r) par interpolation"""
    f = prefix_sum(u) if isinstance(u, MeasureSlice) else u
    grid = f.grid
    if not (grid.x_min < -r and r < grid.x_max):
        raise GridMismatchError(f"r={r} hors du domaine [{grid.x_min}, {grid.x_max}]")
    nodes, values = grid.nodes, f.values
    left = np.interp(-r, nodes, values) - values[0]
    right = values[-1] - np.interp(r, nodes, values)
    return float(left + right)


def detect_population_exit(mu: Union[Field, MeasureSlice], spec: ExitSpec) -> Optional[float]:
    if mu.time <= 0:
        return None
    return mu.time if outside_mass(mu, spec.r) >= 1.0 else None


def detect_hitting(step_field: Field, spec: ExitSpec, w: WeightParams) -> Optional[float]:
    if step_field.time <= 0:
        return None
    return step_field.time if beta_norm(step_field, w) < spec.delta0 else None


class _Detector:
    name = "detector"

    def __init__(self, spec: ExitSpec, w: WeightParams):
        self.spec = spec
        self.w = w
        self.fired_at: Optional[float] = None

    def _fires(self, field: Field, norm_value: float) -> bool:
        raise NotImplementedError

    def observe(self, step: int, field: Field, norm_value: float) -> None:
        if field.time <= 0 or field.time > self.spec.T + _TIME_SLACK:
            return
        if self._fires(field, norm_value):
            self.fired_at = field.time


class NormExitDetector(_Detector):
    name = "norm_exit"

    def _fires(self, field, norm_value):
        return norm_value >= self.spec.r


class PopulationExitDetector(_Detector):
    name = "population_exit"

    def _fires(self, field, norm_value):
        return outside_mass(field, self.spec.r) >= 1.0


class HittingDetector(_Detector):
    name = "hitting"

    def _fires(self, field, norm_value):
        return norm_value < self.spec.delta0


def make_detector(spec: ExitSpec, w: WeightParams) -> _Detector:
    return {
        ExitMode.NORM_EXIT: NormExitDetector,
        ExitMode.POPULATION_EXIT: PopulationExitDetector,
        ExitMode.HITTING: HittingDetector,
    }[spec.mode](spec, w)


def _steps_for(T: float, grid: SpaceTimeGrid) -> int:
    if T > grid.t_end + _TIME_SLACK:
        raise ValueError(f"T={T} dépasse l'horizon de la grille t_end={grid.t_end}")
    return min(grid.nt, int(np.ceil(T / grid.dt - 1e-9)))


def _replica_task(payload) -> Dict:
    spec, m, cfg, grid, seed, replica_id, with_attraction = payload
    detectors = [make_detector(spec, cfg.weights)]
    if with_attraction:
        detectors.append(HittingDetector(spec, cfg.weights))
    try:
        solve_path(m, cfg, grid, NoiseStream(seed, replica_id), detectors,
                   n_steps=_steps_for(spec.T, grid))
    except SimulationError as e:
        logger.warning(f"⚠️ Réplica {replica_id} interrompu : {e}")
        return {"replica_id": replica_id, "tau": None, "tau1": None, "error": str(e)}
    tau1 = detectors[1].fired_at if with_attraction else None
    return {"replica_id": replica_id, "tau": detectors[0].fired_at, "tau1": tau1, "error": None}


def mc_exit_times(spec: ExitSpec, m: ModelSpec, cfg: SolverConfig, grid: SpaceTimeGrid,
                  replicas: int, seed: int, workers: int = 1,
                  with_attraction: bool = False) -> pd.DataFrame:
    """Temps détectés par réplica (NaN si pas de détection avant T), triés par replica_id"""
    if replicas < 1:
        raise ValueError("replicas doit être ≥ 1")
    _steps_for(spec.T, grid)
    if spec.mode == ExitMode.POPULATION_EXIT and not (grid.x_min < -spec.r and spec.r < grid.x_max):
        raise GridMismatchError(f"r={spec.r} hors du domaine [{grid.x_min}, {grid.x_max}]")
    payloads = [(spec, m, cfg, grid, seed, r, with_attraction) for r in range(replicas)]
    results = sorted(map_replicas(_replica_task, payloads, workers), key=lambda d: d["replica_id"])
    frame = pd.DataFrame(results)
    frame["tau"] = pd.to_numeric(frame["tau"], errors="coerce")
    frame["tau1"] = pd.to_numeric(frame["tau1"], errors="coerce")
    frame["failed"] = frame["error"].notna()
    return frame


def summarize_exit(frame: pd.DataFrame, T: float) -> ExitEstimate:
    ok = frame[~frame["failed"]]
    n = len(ok)
    failed = int(frame["failed"].sum())
    if n == 0:
        return ExitEstimate(p_hat=0.0, std_err=0.0, replicas=0, mean_tau_censored=T,
                            censor_fraction=1.0, failed_replicas=failed, detected=0)
    detected = ok["tau"].notna()
    p_hat = float(detected.mean())
    censored = np.where(detected, np.minimum(ok["tau"].fillna(T), T), T)
    return ExitEstimate(
        p_hat=p_hat,
        std_err=float(np.sqrt(p_hat * (1.0 - p_hat) / n)),
        replicas=n,
        mean_tau_censored=float(np.mean(censored)),
        censor_fraction=1.0 - p_hat,
        failed_replicas=failed,
        detected=int(detected.sum()),
    )


def mc_exit(spec: ExitSpec, m: ModelSpec, cfg: SolverConfig, grid: SpaceTimeGrid,
            replicas: int, seed: int, workers: int = 1) -> ExitEstimate:
    """
    Estimation Monte Carlo de P(τ ≤ T) et E[τ ∧ T] avec arrêt anticipé à la détection.
    Les réplicas en erreur sont exclus et comptés à part.
    """
    frame = mc_exit_times(spec, m, cfg, grid, replicas, seed, workers)
    estimate = summarize_exit(frame, spec.T)
    if estimate.failed_replicas:
        logger.warning(f"⚠️ {estimate.failed_replicas} réplicas en erreur sur {replicas}")
    logger.info(
        f"✅ {spec.mode.value} r={spec.r} T={spec.T} ε={cfg.epsilon}: "
        f"p̂={estimate.p_hat:.4f} ± {estimate.std_err:.4f}"
    )
    return estimate


def attraction_counts(spec: ExitSpec, m: ModelSpec, cfg: SolverConfig, grid: SpaceTimeGrid,
                      replicas: int, seed: int, workers: int = 1) -> Dict[str, float]:
    """
    Scénario de point attractif : fréquences de τ ≤ T, τ₁ ≤ T et τ ≤ T < τ₁
    (τ en norme de rayon r, τ₁ atteinte de la boule δ₀).
    """
    norm_spec = spec.model_copy(update={"mode": ExitMode.NORM_EXIT})
    frame = mc_exit_times(norm_spec, m, cfg, grid, replicas, seed, workers, with_attraction=True)
    ok = frame[~frame["failed"]]
    n = max(len(ok), 1)
    tau_hit = ok["tau"].notna()
    tau1_hit = ok["tau1"].notna()
    between = tau_hit & ~tau1_hit
    return {
        "replicas": int(len(ok)),
        "p_tau": float(tau_hit.sum() / n),
        "p_tau1": float(tau1_hit.sum() / n),
        "p_tau_before_T_before_tau1": float(between.sum() / n),
        "both_fired": int((tau_hit & tau1_hit).sum()),
        "tau_first": int((tau_hit & tau1_hit & (ok["tau"] <= ok["tau1"])).sum()),
    }
