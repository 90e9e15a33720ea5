"""
Router principal avec endpoints généraux
"""
from fastapi import APIRouter
from typing import Dict, Any
import logging
from datetime import datetime

from .. import __version__
from ..services.experiment import COMMANDS
from ..services.noise import STREAM_ALGORITHM

router = APIRouter(tags=["Main"])
logger = logging.getLogger(__name__)


@router.get("/", summary="Root endpoint")
async def root() -> Dict[str, Any]:
    """Endpoint racine avec informations sur l'API"""
    return {
        "api": "SPDE Exit-Time Toolkit",
        "version": __version__,
        "description": "Temps de sortie, bornes explicites et grandes déviations pour SBM et FVP",
        "documentation": "/docs",
        "commands": list(COMMANDS),
        "endpoints": {
            "experiments": "/experiments",
            "bounds": "/bounds",
            "exit": "/exit",
            "ldp": "/ldp",
            "system": "/system"
        }
    }


@router.get("/health", summary="Health check")
async def health_check() -> Dict[str, Any]:
    """Vérification de l'état de santé de l'API"""
    return {
        "status": "healthy",
        "api_status": "operational",
        "stream_algorithm": STREAM_ALGORITHM,
        "timestamp": datetime.now().isoformat()
    }
