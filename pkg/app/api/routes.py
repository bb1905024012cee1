"""
Rutas de la API.
"""

import logging
import math

from fastapi import APIRouter, HTTPException, Query
from starlette.concurrency import run_in_threadpool

from app.config import get_settings
from app.errors import LabError
from app.models.schemas import (
    BranchPointResponse,
    ClosureDistance,
    CompareClosuresResponse,
    ComplexValue,
    DelayHorizonResponse,
    EquilibriaResponse,
    ErrorResponse,
    HilbertRow,
    KjcProbeResponse,
    KjcSpec,
    ScenarioConfig,
    SimulationResponse,
    TrajectorySample,
)
from app.services.aero import delay_horizon
from app.services.energy import cumulative_balance, dissipation_integral
from app.services.integrator import lco_drift
from app.services.plate import Grid
from app.services.scenarios import scenario_service

logger = logging.getLogger(__name__)

# Muestras de trayectoria devueltas como maximo en una respuesta
MAX_SAMPLES = 200

router = APIRouter()

ERROR_RESPONSES = {
    422: {"model": ErrorResponse, "description": "Configuracion o dominio invalido"},
    500: {"model": ErrorResponse, "description": "Fallo numerico"},
}


def _http_error(e: LabError) -> HTTPException:
    """Configuracion y dominio -> 422; divergencia y solvers -> 500."""
    status = 422 if e.exit_code == 2 else 500
    return HTTPException(status_code=status, detail=f"{type(e).__name__}: {e}")


def _check_size(config: ScenarioConfig) -> None:
    limit = get_settings().api_max_nodes
    nodes = config.grid.nx * config.grid.ny
    if nodes > limit:
        raise HTTPException(
            status_code=422,
            detail=f"Malla de {nodes} nodos excede el limite de la API ({limit}); usar la CLI",
        )


@router.get("/health")
async def health():
    """Endpoint de salud del servicio."""
    return {"status": "ok"}


@router.post("/simulate", response_model=SimulationResponse, responses=ERROR_RESPONSES)
async def simulate(config: ScenarioConfig) -> SimulationResponse:
    """
    Integra un escenario y devuelve un resumen de la trayectoria.

    Args:
        config: Escenario con las mismas secciones que el archivo TOML

    Returns:
        Normas finales, balance de energia acumulado y muestras de la trayectoria.
    """
    _check_size(config)
    try:
        trajectory = await run_in_threadpool(scenario_service.simulate, config)
        checks = await run_in_threadpool(
            scenario_service.evaluate_expectations, config, trajectory
        )
    except LabError as e:
        raise _http_error(e)
    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"Error en simulacion: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail="Error interno en la simulacion")

    records = trajectory.records
    every = max(1, math.ceil(len(records) / MAX_SAMPLES))
    samples = [
        TrajectorySample(
            t=r.t,
            h2_norm=r.h2_norm,
            ut_norm=r.ut_norm,
            e_pl=r.energy.e_pl,
            diss_cum=r.energy.diss_cum,
            balance_residual=r.energy.balance_residual,
        )
        for r in records[::every]
    ]
    drift = lco_drift(trajectory)
    return SimulationResponse(
        name=config.name,
        steps=len(records) - 1,
        dt=trajectory.dt,
        final_time=records[-1].t,
        final_h2_norm=records[-1].h2_norm,
        final_ut_norm=records[-1].ut_norm,
        cumulative_balance=cumulative_balance(records),
        dissipation=dissipation_integral(trajectory),
        lco_drift=None if math.isnan(drift) else drift,
        samples=samples,
        checks=checks,
    )


@router.post("/equilibria", response_model=EquilibriaResponse, responses=ERROR_RESPONSES)
async def equilibria(config: ScenarioConfig) -> EquilibriaResponse:
    """Continuacion de equilibrios a lo largo de la seccion [sweep]."""
    _check_size(config)
    try:
        branch, critical = await run_in_threadpool(scenario_service.equilibria, config)
    except LabError as e:
        raise _http_error(e)
    except Exception as e:
        logger.error(f"Error en continuacion: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail="Error interno en la continuacion")

    return EquilibriaResponse(
        parameter=branch.parameter,
        points=[
            BranchPointResponse(
                value=p.value,
                h2_norm=p.norm,
                residual=p.residual,
                iterations=p.iterations,
                stability=p.stability,
                trivial_stability=p.trivial_stability,
            )
            for p in branch.points
        ],
        failures=len(branch.failures),
        onset=branch.onset(),
        first_nontrivial=branch.first_nontrivial(),
        critical_load=critical,
    )


@router.post("/kjc/probe", response_model=KjcProbeResponse, responses=ERROR_RESPONSES)
async def kjc_probe(spec: KjcSpec) -> KjcProbeResponse:
    """Sondeo de simbolos y de la transformada de Hilbert finita."""
    try:
        tables = await run_in_threadpool(scenario_service.kjc_probe, spec)
    except LabError as e:
        raise _http_error(e)
    except Exception as e:
        logger.error(f"Error en sondeo KJC: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail="Error interno en el sondeo")

    strip = tables["r_strip"]["abs_r_sqrt_eta"]
    limits = {
        row["limit"]: ComplexValue(re=row["observed_re"], im=row["observed_im"])
        for row in tables["r_limits"].iter_rows(named=True)
    }
    return KjcProbeResponse(
        homogeneity_max_defect=float(tables["homogeneity"]["defect"].max()),
        r_strip_min=float(strip.min()),
        r_strip_max=float(strip.max()),
        r_limits=limits,
        hilbert_round_trip=[
            HilbertRow(**row) for row in tables["hilbert_round_trip"].iter_rows(named=True)
        ],
    )


@router.post(
    "/compare-closures", response_model=CompareClosuresResponse, responses=ERROR_RESPONSES
)
async def compare_closures(config: ScenarioConfig) -> CompareClosuresResponse:
    """Distancia entre piston clasico y potencial con retardo para cada U de [compare]."""
    _check_size(config)
    try:
        frame = await run_in_threadpool(scenario_service.compare_closures, config)
    except LabError as e:
        raise _http_error(e)
    except Exception as e:
        logger.error(f"Error en comparacion de cierres: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail="Error interno en la comparacion")

    return CompareClosuresResponse(
        rows=[ClosureDistance(**row) for row in frame.sort("U").iter_rows(named=True)],
        monotone=scenario_service.is_monotone(frame),
    )


@router.get("/delay-horizon", response_model=DelayHorizonResponse, responses=ERROR_RESPONSES)
async def get_delay_horizon(
    U: float = Query(..., ge=0, description="Velocidad del flujo"),
    lx: float = Query(default=1.0, gt=0),
    ly: float = Query(default=1.0, gt=0),
    nx: int = Query(default=17, ge=5, le=129),
    ny: int = Query(default=17, ge=5, le=129),
) -> DelayHorizonResponse:
    """Horizonte de retardo t* para una malla y una velocidad."""
    try:
        t_star = delay_horizon(Grid(nx, ny, lx, ly), U)
    except LabError as e:
        raise _http_error(e)
    return DelayHorizonResponse(U=U, lx=lx, ly=ly, nx=nx, ny=ny, t_star=t_star)
