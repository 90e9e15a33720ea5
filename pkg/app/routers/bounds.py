"""
Router pour l'évaluation des bornes explicites
"""
from fastapi import APIRouter
from typing import Dict, Any
import json
import logging
from datetime import datetime

from ..services.experiment import ExperimentConfig, bounds_table, validate
from .errors import to_http

router = APIRouter(prefix="/bounds", tags=["Bounds"])
logger = logging.getLogger(__name__)


def _payload(cfg: ExperimentConfig, sweep: bool) -> Dict[str, Any]:
    validate(cfg)
    frame, constants = bounds_table(cfg, sweep=sweep)
    return {
        "rows": json.loads(frame.to_json(orient="records")),
        "constants": constants.ledger(),
        "config_hash": cfg.config_hash(),
        "timestamp": datetime.now().isoformat()
    }


@router.post("/evaluate", summary="Bornes en un point")
async def evaluate(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Toutes les bornes au point (exit.r, solver.epsilon, exit.T) avec leur registre de constantes"""
    try:
        return _payload(cfg, sweep=False)
    except Exception as e:
        raise to_http(e)


@router.post("/sweep", summary="Balayage des bornes")
async def sweep(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Bornes sur la grille run.r_list × run.eps_sweep × run.T_list"""
    try:
        return _payload(cfg, sweep=True)
    except Exception as e:
        raise to_http(e)
