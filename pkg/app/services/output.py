"""
Escritura de resultados: CSV de diagnosticos, instantaneas binarias y manifiestos.

Todas las salidas de un escenario van a su propio directorio; no hay escrituras
compartidas entre escenarios.
"""

import json
import logging
import os
from pathlib import Path

import numpy as np
import polars as pl

from app.errors import ConfigError
from app.models.schemas import RunManifest
from app.services.integrator import Trajectory
from app.services.plate import PlateState
from app.services.stationary import EquilibriumBranch

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = [
    "t",
    "h2_norm",
    "ut_norm",
    "e_pl",
    "kinetic",
    "bending",
    "airy",
    "inplane_work",
    "pressure_work",
    "diss_cum",
    "balance_residual",
    "forcing_norm",
    "probe",
]


def prepare_directory(path: Path) -> Path:
    """Crea el directorio de salida y verifica que se pueda escribir."""
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"No se pudo crear el directorio de salida {path}: {e}") from e
    if not os.access(path, os.W_OK):
        raise ConfigError(f"El directorio de salida {path} no es escribible")
    return path


def trajectory_frame(trajectory: Trajectory) -> pl.DataFrame:
    """Registros por paso como DataFrame con las columnas del esquema."""
    rows = [record.as_row() for record in trajectory.records]
    return pl.DataFrame(rows, schema={name: pl.Float64 for name in TRAJECTORY_COLUMNS})


def write_trajectory(trajectory: Trajectory, path: Path) -> Path:
    trajectory_frame(trajectory).write_csv(path)
    logger.info(f"Trayectoria guardada: {path} ({len(trajectory.records)} filas)")
    return path


def write_snapshots(states: list[PlateState], directory: Path) -> list[Path]:
    """
    snapshots.bin: float64 little-endian en orden C con forma (n, 2, nx, ny), campos u y u_t.
    snapshots.json: cabecera con dimensiones, tipo, orden e instantes.
    """
    if not states:
        raise ConfigError("No hay instantaneas para guardar")
    grid = states[0].grid
    data = np.stack([np.stack([s.u.values, s.v.values]) for s in states]).astype("<f8")
    binary = directory / "snapshots.bin"
    header = directory / "snapshots.json"
    data.tofile(binary)
    header.write_text(
        json.dumps(
            {
                "dtype": "<f8",
                "order": "C",
                "shape": list(data.shape),
                "fields": ["u", "u_t"],
                "times": [s.t for s in states],
                "grid": {"nx": grid.nx, "ny": grid.ny, "lx": grid.lx, "ly": grid.ly},
            },
            indent=2,
        )
    )
    logger.info(f"Instantaneas guardadas: {binary} ({len(states)} x {grid.nx}x{grid.ny})")
    return [binary, header]


def read_snapshots(directory: Path) -> tuple[dict, np.ndarray]:
    """Lee snapshots.bin segun su cabecera."""
    header = json.loads((directory / "snapshots.json").read_text())
    data = np.fromfile(directory / "snapshots.bin", dtype=header["dtype"])
    return header, data.reshape(header["shape"])


def write_branch(branch: EquilibriumBranch, path: Path) -> Path:
    branch.to_frame().write_csv(path)
    if branch.failures:
        failures = pl.DataFrame(
            {
                "value": [f.value for f in branch.failures],
                "error": [f.error for f in branch.failures],
                "residual": [f.residual for f in branch.failures],
            },
            schema_overrides={"residual": pl.Float64},
        )
        failures.write_csv(path.with_name(f"{path.stem}_failures.csv"))
    logger.info(f"Rama guardada: {path} ({len(branch.points)} puntos)")
    return path


def write_table(frame: pl.DataFrame, path: Path) -> Path:
    frame.write_csv(path)
    logger.info(f"Tabla guardada: {path} ({frame.height} filas)")
    return path


def write_manifest(manifest: RunManifest, directory: Path) -> Path:
    path = directory / "manifest.json"
    path.write_text(manifest.model_dump_json(indent=2))
    return path
