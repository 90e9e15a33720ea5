"""
Espaces pondérés - grilles, champs, mesures et normes à poids exponentiel
==========================================================================
Toutes les bornes sont énoncées dans l'espace à poids e^{-β|y|} ; ce module
fournit la grille espace-temps tronquée, les champs cumulatifs u_t(y),
les mesures μ_t associées et les normes/produits scalaires pondérés.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField, model_validator

from ..config import settings
from .errors import CorruptedStateError, GridMismatchError, MonotonicityError

logger = logging.getLogger(__name__)


class SpaceTimeGrid(BaseModel):
    """Domaine spatial tronqué, grille auxiliaire U et maillage temporel"""
    model_config = ConfigDict(frozen=True)

    x_min: float = -8.0
    x_max: float = 8.0
    nx: int = PydanticField(128, ge=2, description="Nombre de cellules spatiales")
    a_min: float = -4.0
    a_max: float = 4.0
    na: int = PydanticField(512, ge=1, description="Nombre de cellules de l'espace auxiliaire")
    t_end: float = PydanticField(1.0, gt=0, description="Horizon T")
    nt: int = PydanticField(512, ge=0, description="Nombre de pas de temps")

    @model_validator(mode="after")
    def _check_domain(self) -> "SpaceTimeGrid":
        if not self.x_min < 0 < self.x_max:
            raise ValueError(f"x_min < 0 < x_max requis (reçu {self.x_min}, {self.x_max})")
        if not self.a_min < self.a_max:
            raise ValueError(f"a_min < a_max requis (reçu {self.a_min}, {self.a_max})")
        return self

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def da(self) -> float:
        return (self.a_max - self.a_min) / self.na

    @property
    def dt(self) -> float:
        return self.t_end / max(self.nt, 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx + 1)

    @property
    def cell_centers(self) -> np.ndarray:
        nodes = self.nodes
        return 0.5 * (nodes[:-1] + nodes[1:])

    @property
    def a_edges(self) -> np.ndarray:
        return np.linspace(self.a_min, self.a_max, self.na + 1)

    @property
    def a_centers(self) -> np.ndarray:
        edges = self.a_edges
        return 0.5 * (edges[:-1] + edges[1:])

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.nt + 1)

    @property
    def stability_ratio(self) -> float:
        return self.dt / self.dx ** 2

    def refined(self, space: int = 2, time: int = 4) -> "SpaceTimeGrid":
        """Grille raffinée (par défaut dx/2 et dt/4, rapport dt/dx² conservé)"""
        return self.model_copy(update={"nx": self.nx * space, "nt": self.nt * time})


class WeightParams(BaseModel):
    """Exposants des poids β, β₀, β₁ avec 0 < β₀ < β₁ < β"""
    model_config = ConfigDict(frozen=True)

    beta: float = 1.0
    beta0: float = 0.25
    beta1: float = 0.5

    @model_validator(mode="after")
    def _check_order(self) -> "WeightParams":
        if not 0 < self.beta0 < self.beta1 < self.beta:
            raise ValueError(
                f"0 < beta0 < beta1 < beta requis (reçu {self.beta0}, {self.beta1}, {self.beta})"
            )
        return self

    @staticmethod
    def _weighted_sup(gap: float) -> float:
        # sup_y e^{-gap|y|} atteint en y = 0
        ys = np.linspace(-1.0, 1.0, 3)
        return float(np.max(np.exp(-gap * np.abs(ys))))

    @property
    def C3(self) -> float:
        return self._weighted_sup(self.beta - self.beta1)

    @property
    def C4(self) -> float:
        return self._weighted_sup(self.beta - self.beta0)

    @property
    def C5(self) -> float:
        return self._weighted_sup(self.beta1 - self.beta0)


@dataclass(frozen=True)
class Field:
    """Champ cumulatif u_t(·) aux nœuds de la grille"""
    values: np.ndarray
    grid: SpaceTimeGrid
    time: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.nx + 1,):
            raise GridMismatchError(
                f"Champ de taille {values.shape} incompatible avec {self.grid.nx + 1} nœuds"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class MeasureSlice:
    """Mesure μ_t : densité par cellule et valeur de base u(x_min)"""
    density: np.ndarray
    grid: SpaceTimeGrid
    time: float = 0.0
    base: float = 0.0

    def __post_init__(self):
        density = np.array(self.density, dtype=float)
        if density.shape != (self.grid.nx,):
            raise GridMismatchError(
                f"Densité de taille {density.shape} incompatible avec {self.grid.nx} cellules"
            )
        density.setflags(write=False)
        object.__setattr__(self, "density", density)

    @property
    def mass(self) -> float:
        return float(np.sum(self.density) * self.grid.dx)


@dataclass(frozen=True)
class MeasurePath:
    """Trajectoire discrète t ↦ μ_t (densités + représentation cumulative)"""
    times: np.ndarray
    densities: np.ndarray
    grid: SpaceTimeGrid
    bases: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        densities = np.atleast_2d(np.array(self.densities, dtype=float))
        if densities.shape != (times.size, self.grid.nx):
            raise GridMismatchError(
                f"Densités {densities.shape} incompatibles avec ({times.size}, {self.grid.nx})"
            )
        if np.any(densities < 0):
            raise MonotonicityError("Densité négative dans la trajectoire de mesures")
        bases = np.zeros(times.size) if self.bases is None else np.array(self.bases, dtype=float)
        for arr in (times, densities, bases):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "densities", densities)
        object.__setattr__(self, "bases", bases)

    def __len__(self) -> int:
        return self.times.size

    def slice(self, index: int) -> MeasureSlice:
        return MeasureSlice(self.densities[index], self.grid, float(self.times[index]),
                            float(self.bases[index]))

    @property
    def cumulative(self) -> List[Field]:
        return [prefix_sum(self.slice(i)) for i in range(len(self))]

    def total_masses(self) -> np.ndarray:
        return self.densities.sum(axis=1) * self.grid.dx

    @classmethod
    def from_slices(cls, slices: Sequence[MeasureSlice]) -> "MeasurePath":
        if not slices:
            raise ValueError("Trajectoire vide")
        grid = slices[0].grid
        return cls(
            times=np.array([s.time for s in slices]),
            densities=np.vstack([s.density for s in slices]),
            grid=grid,
            bases=np.array([s.base for s in slices]),
        )

    @classmethod
    def from_fields(cls, fields: Sequence[Field],
                    tolerance: Optional[float] = None) -> "MeasurePath":
        return cls.from_slices([cumulative_to_measure(f, tolerance) for f in fields])


def _node_weights(grid: SpaceTimeGrid, beta: float) -> np.ndarray:
    return np.exp(-beta * np.abs(grid.nodes))


def _cell_weights(grid: SpaceTimeGrid, beta: float) -> np.ndarray:
    w = _node_weights(grid, beta)
    return 0.5 * (w[:-1] + w[1:])


def beta_norm(f: Field, w: WeightParams) -> float:
    """
    Norme ‖f‖_β = max_y e^{-β|y|}|f(y)| sur les nœuds de la grille.

    Raises:
        CorruptedStateError: si le champ contient des valeurs non finies
    """
    if not np.all(np.isfinite(f.values)):
        raise CorruptedStateError(f"Champ non fini à t={f.time}")
    return float(np.max(_node_weights(f.grid, w.beta) * np.abs(f.values)))


def measure_beta_inner(mu: MeasureSlice, f, w: WeightParams, literal: bool = False) -> float:
    """
    Produit pondéré ⟨f, μ⟩_β.

    Par défaut : ∫ e^{-β|y|}|f(y)| μ(dy), intégrande moyennée sur chaque cellule.
    literal=True : (sup_y e^{-β|y|}|f(y)|)·μ(ℝ), lecture textuelle de la définition.
    f est donnée aux nœuds (nx+1 valeurs) ou aux cellules (nx valeurs).
    """
    grid = mu.grid
    values = np.asarray(f, dtype=float)
    if values.shape == (grid.nx + 1,):
        nodal = _node_weights(grid, w.beta) * np.abs(values)
        cell = 0.5 * (nodal[:-1] + nodal[1:])
        sup = float(np.max(nodal))
    elif values.shape == (grid.nx,):
        cell = _cell_weights(grid, w.beta) * np.abs(values)
        sup = float(np.max(cell)) if cell.size else 0.0
    else:
        raise GridMismatchError(
            f"Fonction test de taille {values.shape} incompatible avec la grille (nx={grid.nx})"
        )
    if literal:
        return sup * mu.mass
    return float(np.sum(cell * mu.density) * grid.dx)


def basis_order(grid: SpaceTimeGrid) -> np.ndarray:
    """Indices des cellules triés du centre vers les bords"""
    return np.argsort(np.abs(grid.cell_centers), kind="stable")


def measure_beta_norm_sq(mu: MeasureSlice, w: WeightParams,
                         basis_size: Optional[int] = None) -> float:
    """
    ‖μ‖²_β = Σ_j ⟨μ, f_j⟩²_β sur la base orthonormée f_j = 1_{cellule j}/√dx,
    tronquée aux basis_size premières cellules en partant de l'origine.

    Les indicatrices de cellules normalisées sont deux à deux orthogonales,
    contrairement aux fonctions chapeau P1 dont les supports se chevauchent ;
    la somme des carrés vaut donc la norme sans terme croisé.
    """
    grid = mu.grid
    size = grid.nx if basis_size is None else int(basis_size)
    if size < 0 or size > grid.nx:
        raise GridMismatchError(f"basis_size={size} hors de [0, {grid.nx}]")
    if size == 0:
        return 0.0
    coeffs = _cell_weights(grid, w.beta) * mu.density * np.sqrt(grid.dx)
    selected = coeffs[basis_order(grid)[:size]]
    return float(np.sum(selected ** 2))


def cumulative_to_measure(f: Field, tolerance: Optional[float] = None) -> MeasureSlice:
    """
    Densité de μ par différences avant de u divisées par dx.

    Raises:
        MonotonicityError: si u décroît au-delà de la tolérance
    """
    tol = settings.monotone_tolerance if tolerance is None else tolerance
    increments = np.diff(f.values)
    worst = float(increments.min()) if increments.size else 0.0
    if worst < -tol:
        raise MonotonicityError(
            f"Champ décroissant à t={f.time} (incrément minimal {worst:.3e} < -{tol:.1e})"
        )
    density = np.clip(increments, 0.0, None) / f.grid.dx
    return MeasureSlice(density=density, grid=f.grid, time=f.time, base=float(f.values[0]))


def prefix_sum(mu: MeasureSlice) -> Field:
    """Réciproque de cumulative_to_measure : u = u(x_min) + Σ densité·dx"""
    values = mu.base + np.concatenate([[0.0], np.cumsum(mu.density) * mu.grid.dx])
    return Field(values=values, grid=mu.grid, time=mu.time)


def tail_within_tolerance(f: Field, w: WeightParams, tolerance: Optional[float] = None,
                          log: bool = True) -> bool:
    """Vérifie e^{-β|x_bord|}·max|u| < tolérance ; journalise sinon"""
    tol = settings.tail_tolerance if tolerance is None else tolerance
    grid = f.grid
    edge_weight = np.exp(-w.beta * min(abs(grid.x_min), abs(grid.x_max)))
    tail = float(edge_weight * np.max(np.abs(f.values)))
    if tail >= tol:
        if log:
            logger.warning(f"⚠️ Queue pondérée {tail:.2e} ≥ {tol:.1e} à t={f.time:.4f}")
        return False
    return True
