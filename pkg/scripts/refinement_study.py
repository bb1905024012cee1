#!/usr/bin/env python3
"""
Estudio de refinamiento en dt del residuo de balance de energia.

Corre un escenario con dt, dt/2, dt/4, ... y reporta la suma de |balance_residual|
de cada nivel y el orden observado entre niveles consecutivos.

Uso:
    uv run scripts/refinement_study.py scenarios/damped.toml --levels 3 --T 2

    # O con el entorno virtual activado:
    python scripts/refinement_study.py scenarios/piston-forced.toml --out output/refinement.csv
"""

import argparse
import logging
import math
import sys
from pathlib import Path

import polars as pl

# Agregar directorio raiz al path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.services.energy import cumulative_balance
from app.services.integrator import default_dt
from app.services.scenarios import scenario_service

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


def refinement_table(config_path: Path, levels: int, T: float | None) -> pl.DataFrame:
    config = scenario_service.load_config(config_path)
    grid = scenario_service.build_grid(config)
    base = config.time.dt or default_dt(grid)
    time_spec = config.time.model_copy(update={"T": T or config.time.T})

    rows = []
    for level in range(levels):
        dt = base / 2**level
        run_config = config.model_copy(update={"time": time_spec.model_copy(update={"dt": dt})})
        trajectory = scenario_service.simulate(run_config)
        balance = cumulative_balance(trajectory.records)
        order = None
        if rows and balance > 0 and rows[-1]["balance"] > 0:
            order = math.log2(rows[-1]["balance"] / balance)
        rows.append({"dt": dt, "steps": len(trajectory.records) - 1, "balance": balance, "order": order})
        logger.info(f"dt={dt:.3e}: balance={balance:.3e}, orden={order}")
    return pl.DataFrame(rows, schema_overrides={"order": pl.Float64})


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("config", type=Path, help="Escenario TOML")
    parser.add_argument("--levels", type=int, default=3, help="Niveles de refinamiento")
    parser.add_argument("--T", type=float, help="Instante final (por defecto el del escenario)")
    parser.add_argument("--out", type=Path, help="CSV de salida")
    args = parser.parse_args()

    print("=" * 70)
    print(f"REFINAMIENTO EN dt: {args.config}")
    print("=" * 70)

    table = refinement_table(args.config, args.levels, args.T)
    print(table)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        table.write_csv(args.out)
        print(f"Tabla guardada en {args.out}")


if __name__ == "__main__":
    main()
