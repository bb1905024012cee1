"""
Servicios de la aplicacion.
"""

from app.services.checks import run_selftest
from app.services.scenarios import scenario_service

__all__ = [
    "run_selftest",
    "scenario_service",
]
