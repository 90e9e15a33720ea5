"""
Boîte à outils de temps de sortie pour les EDPS de population (SBM, Fleming-Viot)
"""

__version__ = "1.0.0"
