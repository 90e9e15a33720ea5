"""
Router pour les fonctionnelles de taux et le balayage en ε
"""
from fastapi import APIRouter
from typing import Dict, Any, List, Literal, Optional, Tuple
from pydantic import BaseModel, Field
import json
import logging
from datetime import datetime

import numpy as np

from ..services.experiment import ExperimentConfig, validate
from ..services.ldp import ControlFunction, ldp_scaling_scan, rate_measure, rate_spde, scaling_trend_ok
from ..services.models import ModelKind
from ..services.weighted_space import MeasurePath, SpaceTimeGrid
from .errors import to_http

router = APIRouter(prefix="/ldp", tags=["Large Deviations"])
logger = logging.getLogger(__name__)


class RateSpdeSchema(BaseModel):
    """Contrôle h sur la grille (temps × a)"""
    grid: SpaceTimeGrid
    values: List[List[float]]
    axis: Literal["a", "y"] = "a"


class RateMeasureSchema(BaseModel):
    """Trajectoire de densités par cellule"""
    grid: SpaceTimeGrid
    times: List[float]
    densities: List[List[float]]
    kind: ModelKind = ModelKind.SBM
    support: Optional[Tuple[float, float]] = None
    constraint_tolerance: float = Field(1e-3, gt=0)


@router.post("/rate-spde", summary="½‖h‖²")
async def evaluate_rate_spde(request: RateSpdeSchema) -> Dict[str, Any]:
    """Taux de l'EDPS pour un contrôle donné"""
    try:
        h = ControlFunction(np.array(request.values, dtype=float), request.grid, request.axis)
        result = rate_spde(h)
        return {
            "value": result.value,
            "admissible": result.admissible,
            "timestamp": datetime.now().isoformat()
        }
    except Exception as e:
        raise to_http(e)


@router.post("/rate-measure", summary="Taux d'une trajectoire de mesures")
async def evaluate_rate_measure(request: RateMeasureSchema) -> Dict[str, Any]:
    """Taux SBM ou FVP avec les diagnostics de Cameron–Martin"""
    try:
        path = MeasurePath(times=np.array(request.times), densities=np.array(request.densities),
                           grid=request.grid)
        result = rate_measure(path, request.kind, support=request.support,
                              constraint_tolerance=request.constraint_tolerance)
        return {
            "value": None if not np.isfinite(result.value) else result.value,
            "admissible": result.admissible,
            "residuals": result.residuals,
            "timestamp": datetime.now().isoformat()
        }
    except Exception as e:
        raise to_http(e)


@router.post("/scan", summary="Balayage ε log p̂")
async def scan(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Tableau (ε, p̂, ε log p̂, IC) sur run.eps_list"""
    try:
        validate(cfg)
        table = ldp_scaling_scan(cfg.exit_spec(), cfg.model_spec(), cfg.solver_config(), cfg.grid_spec(),
                                 cfg.run.eps_list, cfg.run.replicas, cfg.run.seed, cfg.run.workers)
        return {
            "rows": json.loads(table.to_json(orient="records")),
            "trend_ok": scaling_trend_ok(table),
            "timestamp": datetime.now().isoformat()
        }
    except Exception as e:
        raise to_http(e)
