"""
Exécution des réplicas Monte Carlo, en série ou sur un pool de processus
"""
from multiprocessing import Pool
from typing import Any, Callable, List, Sequence
import logging

from ..config import settings

logger = logging.getLogger(__name__)


def resolve_workers(workers: int) -> int:
    """Nombre de workers effectif ; SPDE_WORKERS s'applique si workers vaut 0"""
    return max(1, workers or settings.workers)


def map_replicas(task: Callable[[Any], Any], payloads: Sequence[Any], workers: int = 1) -> List[Any]:
    """
    Applique task à chaque payload. L'ordre des résultats suit celui des payloads,
    indépendamment de l'ordonnancement des workers.
    """
    workers = resolve_workers(workers)
    if workers <= 1 or len(payloads) <= 1:
        return [task(p) for p in payloads]
    chunksize = max(1, len(payloads) // (4 * workers))
    logger.info(f"Pool de {workers} workers pour {len(payloads)} réplicas")
    with Pool(processes=workers) as pool:
        return pool.map(task, payloads, chunksize=chunksize)
