"""
Router pour l'estimation Monte Carlo des temps de sortie
"""
from fastapi import APIRouter
from typing import Dict, Any
import logging
from datetime import datetime

from ..services.exit_times import attraction_counts
from ..services.experiment import ExperimentConfig, exit_row, validate
from .errors import to_http

router = APIRouter(prefix="/exit", tags=["Exit Times"])
logger = logging.getLogger(__name__)


@router.post("/probability", summary="P̂(τ ≤ T)")
async def exit_probability(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Estimation Monte Carlo de P(τ ≤ T) et de E[τ ∧ T] pour le bloc exit"""
    try:
        validate(cfg)
        row = exit_row(cfg, cfg.exit_spec(), cfg.solver.epsilon)
        return {
            "estimate": row,
            "config_hash": cfg.config_hash(),
            "timestamp": datetime.now().isoformat()
        }
    except Exception as e:
        raise to_http(e)


@router.post("/attraction", summary="Scénario de point attractif")
async def attraction(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Fréquences de τ ≤ T, τ₁ ≤ T et τ ≤ T < τ₁"""
    try:
        validate(cfg)
        counts = attraction_counts(cfg.exit_spec(), cfg.model_spec(), cfg.solver_config(), cfg.grid_spec(),
                                   cfg.run.replicas, cfg.run.seed, cfg.run.workers)
        return {
            "counts": counts,
            "config_hash": cfg.config_hash(),
            "timestamp": datetime.now().isoformat()
        }
    except Exception as e:
        raise to_http(e)
