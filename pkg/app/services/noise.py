"""
Bruit blanc espace-temps W(da ds) discrétisé sur la grille auxiliaire
=====================================================================
Flux pseudo-aléatoires à compteur (Philox) : chaque tranche est déterminée
par (seed, replica_id, step_index), ce qui permet le rejeu sans stockage
et l'exécution parallèle des réplicas.
"""
from dataclasses import dataclass
import logging

import numpy as np

from .weighted_space import SpaceTimeGrid

logger = logging.getLogger(__name__)

STREAM_ALGORITHM = "philox4x64-10"
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseStream:
    """Flux de bruit d'un réplica, clé Philox = (seed, replica_id)"""
    seed: int
    replica_id: int = 0

    @property
    def key(self) -> np.ndarray:
        return np.array([self.seed & _MASK64, self.replica_id & _MASK64], dtype=np.uint64)

    def generator(self, step_index: int) -> np.random.Generator:
        # le mot de poids fort du compteur porte le pas de temps
        counter = np.array([0, 0, 0, step_index & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self.key, counter=counter))


@dataclass(frozen=True)
class NoiseSlice:
    """Incréments W(cellule a × [t_n, t_{n+1}]) ~ N(0, da·dt)"""
    increments: np.ndarray
    step_index: int
    variance: float


def sample_slice(stream: NoiseStream, grid: SpaceTimeGrid, step_index: int) -> NoiseSlice:
    """
    Tire la tranche de bruit du pas step_index (na incréments i.i.d.).

    Raises:
        ValueError: si step_index est hors de [0, nt)
    """
    if not 0 <= step_index < grid.nt:
        raise ValueError(f"step_index={step_index} hors de [0, {grid.nt})")
    variance = grid.da * grid.dt
    increments = stream.generator(step_index).standard_normal(grid.na) * np.sqrt(variance)
    return NoiseSlice(increments=increments, step_index=step_index, variance=variance)
