"""
Router pour l'exécution des expériences
"""
from fastapi import APIRouter, Query
from typing import Dict, Any, Optional
import logging
from datetime import datetime

from ..services.experiment import COMMANDS, ExperimentConfig, collect_violations, run_experiment
from .errors import to_http

router = APIRouter(prefix="/experiments", tags=["Experiments"])
logger = logging.getLogger(__name__)


@router.post("/run", summary="Exécuter une commande")
async def run(
    cfg: ExperimentConfig,
    command: Optional[str] = Query(None, description=f"Remplace run.command ({', '.join(COMMANDS)})")
) -> Dict[str, Any]:
    """
    Exécute le pipeline demandé et retourne le manifeste.
    Les sorties sont écrites dans run.output_dir.
    """
    try:
        if command:
            cfg = cfg.model_copy(update={"run": cfg.run.model_copy(update={"command": command})})
        logger.info(f"Exécution HTTP de '{cfg.run.command}'")
        manifest = run_experiment(cfg)
        return {
            "success": True,
            "manifest": manifest.model_dump(mode="json"),
            "timestamp": datetime.now().isoformat()
        }
    except Exception as e:
        raise to_http(e)


@router.post("/validate", summary="Valider une configuration")
async def validate_config(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Liste toutes les violations sans rien exécuter"""
    errors = collect_violations(cfg)
    return {
        "valid": not errors,
        "errors": errors,
        "config_hash": cfg.config_hash(),
        "timestamp": datetime.now().isoformat()
    }
