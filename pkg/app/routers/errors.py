"""
Traduction des erreurs du domaine en HTTPException
"""
from fastapi import HTTPException
import logging

from ..services.errors import ConfigValidationError, SimulationError

logger = logging.getLogger(__name__)


def to_http(e: Exception) -> HTTPException:
    """422 pour la validation et le domaine, 500 pour le reste"""
    if isinstance(e, HTTPException):
        return e
    if isinstance(e, ConfigValidationError):
        return HTTPException(status_code=422, detail={"errors": e.errors})
    if isinstance(e, (SimulationError, ValueError)):
        return HTTPException(status_code=422, detail=str(e))
    logger.error(f"❌ Erreur interne : {e}")
    return HTTPException(status_code=500, detail=str(e))
