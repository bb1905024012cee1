"""
Configuracion de la aplicacion.
"""

from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict

# Directorio base del proyecto (donde esta este paquete)
API_BASE_DIR = Path(__file__).resolve().parent.parent


class Settings(BaseSettings):
    """Configuracion de la aplicacion."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",  # Ignorar variables de entorno extra
    )

    # Directorio de resultados (se configura via OUTPUT_PATH)
    output_path: Path = API_BASE_DIR / "output"

    # Escenarios incluidos con el proyecto
    scenarios_path: Path = API_BASE_DIR / "scenarios"

    # Solvers lineales
    linear_solver: Literal["direct", "cg"] = "direct"
    solver_rtol: float = 1e-10
    solver_maxiter: int = 5000

    # Newton para estados estacionarios
    newton_tol: float = 1e-9
    newton_max_iter: int = 30

    # Espectro linealizado denso solo en mallas pequenas
    stability_max_nodes: int = 33 * 33

    # Ejecucion
    threads: int = 1
    seed: int = 0

    # Logging
    log_level: str = "INFO"

    # CORS
    cors_origins: list[str] = ["http://localhost:8000"]

    # API
    api_title: str = "Panel Flutter Lab API"
    api_version: str = "0.1.0"
    api_description: str = "Simulacion de aleteo no lineal de paneles de von Karman"
    docs_enabled: bool = True

    # Mallas mas grandes se rechazan en la API (las corridas largas van por la CLI)
    api_max_nodes: int = 33 * 33


@lru_cache
def get_settings() -> Settings:
    """Obtiene la configuracion cacheada."""
    return Settings()
