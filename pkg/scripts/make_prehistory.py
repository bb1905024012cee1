#!/usr/bin/env python3
"""
Genera un archivo de prehistoria (.npz) a partir de una corrida.

El archivo tiene los arreglos times (n,), u y v (n, nx, ny), con la ultima
instantanea en t = 0, y se usa desde un escenario con [prehistory] kind = "file"
y el mismo dt. Por defecto cubre el horizonte de retardo t* de la malla y U del
escenario fuente.

Uso:
    uv run scripts/make_prehistory.py scenarios/piston-forced.toml output/prehistory.npz
    uv run scripts/make_prehistory.py scenarios/damped.toml output/prehistory.npz --horizon 0.5
"""

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

# Agregar directorio raiz al path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.services.aero import delay_horizon
from app.services.scenarios import scenario_service

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


def main() -> None:
    parser = argparse.ArgumentParser(description="Genera una prehistoria .npz")
    parser.add_argument("config", type=Path, help="Escenario TOML de la corrida fuente")
    parser.add_argument("out", type=Path, help="Archivo .npz de salida")
    parser.add_argument("--horizon", type=float, help="Ventana a guardar (por defecto t*)")
    args = parser.parse_args()

    config = scenario_service.load_config(args.config)
    config = config.model_copy(update={"time": config.time.model_copy(update={"stride": 1})})
    grid = scenario_service.build_grid(config)
    horizon = args.horizon or delay_horizon(grid, config.model.U)
    dt = scenario_service.time_step(config, grid)

    trajectory = scenario_service.simulate(config)
    count = min(len(trajectory.states), math.ceil(horizon / dt - 1e-9) + 1)
    if count * dt < horizon:
        logger.warning(f"La corrida es mas corta que el horizonte {horizon:.4f}")
    states = trajectory.states[-count:]
    t_end = states[-1].t

    args.out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        args.out,
        times=np.array([s.t - t_end for s in states]),
        u=np.stack([s.u.values for s in states]),
        v=np.stack([s.v.values for s in states]),
    )
    logger.info(f"Prehistoria guardada en {args.out}: {count} instantaneas, dt={dt:.3e}")


if __name__ == "__main__":
    main()
