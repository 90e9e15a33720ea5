# app/routers/__init__.py
"""
Package routers - Organise tous les routeurs FastAPI
"""

from .main import router as main_router
from .experiments import router as experiments_router
from .bounds import router as bounds_router
from .exit_times import router as exit_router
from .ldp import router as ldp_router
from .system import router as system_router

# Liste de tous les routeurs pour inclusion facile
all_routers = [
    main_router,
    experiments_router,
    bounds_router,
    exit_router,
    ldp_router,
    system_router
]

# Exporter individuellement
__all__ = [
    "main_router",
    "experiments_router",
    "bounds_router",
    "exit_router",
    "ldp_router",
    "system_router",
    "all_routers"
]
