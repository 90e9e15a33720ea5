"""
Configuration centralisée depuis les variables d'environnement
"""
import logging
import os
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # === Sorties ===
    output_dir: str = os.getenv("SPDE_OUTPUT_DIR", "runs")
    workers: int = int(os.getenv("SPDE_WORKERS", "1"))

    # === Numérique ===
    stability_limit: float = float(os.getenv("SPDE_STABILITY_LIMIT", "0.25"))
    tail_tolerance: float = float(os.getenv("SPDE_TAIL_TOLERANCE", "1e-3"))
    monotone_tolerance: float = float(os.getenv("SPDE_MONOTONE_TOLERANCE", "1e-9"))
    density_floor: float = float(os.getenv("SPDE_DENSITY_FLOOR", "1e-12"))

    # === API ===
    api_port: int = int(os.getenv("API_PORT", "8000"))
    api_host: str = os.getenv("API_HOST", "127.0.0.1")

    # === Debug ===
    debug: bool = os.getenv("DEBUG", "False").lower() == "true"
    log_level: str = os.getenv("LOG_LEVEL", "INFO")

    class Config:
        env_file = ".env"
        case_sensitive = False
        extra = "ignore"  # Ignorer les variables env non définies

    @property
    def log_level_value(self) -> int:
        return getattr(logging, self.log_level.upper(), logging.INFO)


# Instance unique de settings
settings = Settings()
