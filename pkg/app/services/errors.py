"""
Hiérarchie des erreurs du domaine
=================================
Toutes les erreurs levées par les services dérivent de SimulationError ;
les routeurs et la CLI les traduisent en codes HTTP ou en statuts de sortie.
"""
from typing import List


class SimulationError(Exception):
    """Erreur de base des services de simulation"""


class CorruptedStateError(SimulationError):
    """Champ contenant des valeurs non finies"""


class GridMismatchError(SimulationError):
    """Vecteur défini sur une grille incompatible"""


class MonotonicityError(SimulationError):
    """Champ cumulatif décroissant au-delà de la tolérance"""


class ModelDomainError(SimulationError):
    """Valeur de u hors du domaine admissible du modèle"""


class StabilityError(SimulationError):
    """Rapport dt/dx² au-dessus de la limite du schéma explicite"""


class NoiseRangeError(SimulationError):
    """Masse SBM sortie de la grille auxiliaire [a_min, a_max]"""


class ReplayError(SimulationError):
    """Informations de rejeu du bruit absentes ou incomplètes"""


class VacuousBoundError(SimulationError):
    """Borne sans contenu (série géométrique divergente)"""


class RateEvaluationError(SimulationError):
    """Fonctionnelle de taux non évaluable (densité sous le plancher)"""


class ConfigValidationError(SimulationError):
    """Configuration invalide ; porte la liste complète des violations"""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
