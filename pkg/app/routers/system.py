"""
Router pour les informations système et la configuration
"""
from fastapi import APIRouter, HTTPException
from typing import Dict, Any
from datetime import datetime
import os
import platform
import sys

import numpy as np
import pandas as pd
import scipy

from .. import __version__
from ..config import settings
from ..services.noise import STREAM_ALGORITHM
from ..services.parallel import resolve_workers

router = APIRouter(prefix="/system", tags=["System Administration"])


@router.get("/info", summary="Informations système")
async def get_system_info() -> Dict[str, Any]:
    """Versions, plateforme et parallélisme disponible"""
    try:
        return {
            "app": {
                "name": "SPDE Exit-Time Toolkit",
                "version": __version__,
                "python_version": sys.version,
                "platform": platform.platform(),
                "working_directory": os.getcwd(),
                "pid": os.getpid()
            },
            "numerics": {
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pandas": pd.__version__,
                "stream_algorithm": STREAM_ALGORITHM
            },
            "parallel": {
                "cpu_count": os.cpu_count(),
                "workers": resolve_workers(0)
            },
            "timestamp": datetime.now().isoformat()
        }
    except Exception as e:
        raise HTTPException(status_code=500, detail=str(e))


@router.get("/config", summary="Configuration de l'application")
async def get_application_config() -> Dict[str, Any]:
    """Retourne les réglages chargés depuis l'environnement"""
    return {
        "config": {
            "output_dir": settings.output_dir,
            "workers": settings.workers,
            "stability_limit": settings.stability_limit,
            "tail_tolerance": settings.tail_tolerance,
            "monotone_tolerance": settings.monotone_tolerance,
            "density_floor": settings.density_floor,
            "noise_algorithm": STREAM_ALGORITHM,
            "api": {
                "host": settings.api_host,
                "port": settings.api_port,
                "debug": settings.debug
            },
            "log_level": settings.log_level
        },
        "environment": os.environ.get("ENVIRONMENT", "development"),
        "timestamp": datetime.now().isoformat()
    }
