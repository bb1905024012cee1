"""
Diagnosticos de energia de la placa.

E_pl = 1/2 <(1 - alpha Delta) u_t, u_t> + 1/2 ||Delta u||^2 + 1/4 ||Delta v(u)||^2
       - <F0, [u, u]> + <p0, u>

con la convencion de signos tal como se imprime. El esquema conserva la parte
conservativa (cinetica + flexion + Airy + trabajo en el plano / 2); el residuo de
balance descuenta el cambio del desfase entre ambas, asi que no depende de la
convencion impresa.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.optimize import minimize

from app.services.aero import ModelParams
from app.services.plate import (
    PlateField,
    PlateState,
    airy_stress,
    bending_solver,
    check_same_grid,
    dirichlet_gradient_norm,
    h2_norm,
    inner,
    interior_curvatures,
    l2_norm,
    plate_operators,
    vk_bracket,
)

logger = logging.getLogger(__name__)


@dataclass
class EnergyRecord:
    """Componentes de la energia de la placa en un instante."""

    t: float
    kinetic: float
    bending: float
    airy: float
    inplane_work: float
    pressure_work: float
    diss_cum: float = 0.0
    balance_residual: float = 0.0

    @property
    def e_pl(self) -> float:
        return self.kinetic + self.bending + self.airy + self.inplane_work + self.pressure_work


@dataclass
class StepRecord:
    """Registro por paso: energia mas normas del estado y del forzamiento."""

    energy: EnergyRecord
    h2_norm: float
    ut_norm: float
    forcing_norm: float
    probe: float = 0.0

    @property
    def t(self) -> float:
        return self.energy.t

    def as_row(self) -> dict[str, float]:
        """Fila plana con las columnas del CSV de trayectoria."""
        energy = asdict(self.energy)
        return {
            "t": self.energy.t,
            "h2_norm": self.h2_norm,
            "ut_norm": self.ut_norm,
            "e_pl": self.energy.e_pl,
            "kinetic": energy["kinetic"],
            "bending": energy["bending"],
            "airy": energy["airy"],
            "inplane_work": energy["inplane_work"],
            "pressure_work": energy["pressure_work"],
            "diss_cum": energy["diss_cum"],
            "balance_residual": energy["balance_residual"],
            "forcing_norm": self.forcing_norm,
            "probe": self.probe,
        }


@dataclass
class BalanceWindow:
    """Dos estados consecutivos y el forzamiento total (aerodinamico + p0) en cada uno."""

    before: PlateState
    after: PlateState
    forcing_before: PlateField
    forcing_after: PlateField


class HasRecords(Protocol):
    records: list[StepRecord]
    params: ModelParams


def plate_energy(
    state: PlateState, params: ModelParams, stress: PlateField | None = None
) -> EnergyRecord:
    """Componentes de E_pl; en la placa lineal se omiten Airy y trabajo en el plano."""
    check_same_grid(state.u, state.v, params.p0)
    u, v = state.u, state.v

    kinetic = 0.5 * l2_norm(v) ** 2
    if params.alpha > 0:
        kinetic += 0.5 * params.alpha * dirichlet_gradient_norm(v) ** 2

    bending = 0.5 * h2_norm(u) ** 2

    if params.nonlinear:
        if stress is None:
            stress = airy_stress(u)
        airy = 0.25 * h2_norm(stress) ** 2
        inplane_work = -inner(params.F0, vk_bracket(u, u))
    else:
        airy = 0.0
        inplane_work = 0.0

    pressure_work = inner(params.p0, u)
    return EnergyRecord(
        t=state.t,
        kinetic=kinetic,
        bending=bending,
        airy=airy,
        inplane_work=inplane_work,
        pressure_work=pressure_work,
    )


def conservative_energy(record: EnergyRecord) -> float:
    """Cantidad que conserva el esquema sin forzamiento ni amortiguamiento."""
    return record.kinetic + record.bending + record.airy + 0.5 * record.inplane_work


def convention_offset(record: EnergyRecord) -> float:
    """E_pl - conservative_energy = trabajo en el plano / 2 + trabajo de presion."""
    return 0.5 * record.inplane_work + record.pressure_work


def balance_residual(
    window: BalanceWindow,
    params: ModelParams,
    records: tuple[EnergyRecord, EnergyRecord] | None = None,
) -> float:
    """
    Defecto del balance de energia en un paso.

    r = dE_pl + k dt (|u_t^n|^2 + |u_t^{n+1}|^2)/2 - W_aero - d(offset),
    con W_aero = dt <(R^n + R^{n+1})/2, (u_t^n + u_t^{n+1})/2>.
    """
    before, after = window.before, window.after
    dt = after.t - before.t
    if records is None:
        records = (plate_energy(before, params), plate_energy(after, params))
    e_before, e_after = records

    dissipation = params.k * dt * 0.5 * (l2_norm(before.v) ** 2 + l2_norm(after.v) ** 2)
    mean_velocity = 0.5 * (before.v + after.v)
    mean_forcing = 0.5 * (window.forcing_before + window.forcing_after)
    work = dt * inner(mean_forcing, mean_velocity)

    return (
        (e_after.e_pl - e_before.e_pl)
        + dissipation
        - work
        - (convention_offset(e_after) - convention_offset(e_before))
    )


def dissipation_from_samples(times: np.ndarray, ut_norms: np.ndarray, k: float) -> float:
    """Trapecio de k ||u_t||^2."""
    if len(times) < 2:
        return 0.0
    return float(trapezoid(k * np.asarray(ut_norms) ** 2, times))


def dissipation_integral(trajectory: HasRecords) -> float:
    """int_0^T k ||u_t||^2 dt sobre los registros de una trayectoria."""
    times = np.array([r.t for r in trajectory.records])
    norms = np.array([r.ut_norm for r in trajectory.records])
    return dissipation_from_samples(times, norms, trajectory.params.k)


def window_contributions(trajectory: HasRecords, window: float) -> np.ndarray:
    """Contribucion de cada ventana de longitud `window` a la integral de disipacion."""
    times = np.array([r.t for r in trajectory.records])
    norms = np.array([r.ut_norm for r in trajectory.records])
    if len(times) < 2:
        return np.zeros(0)
    cumulative = np.concatenate(
        [[0.0], cumulative_trapezoid(trajectory.params.k * norms**2, times)]
    )
    edges = np.arange(times[0], times[-1] + 1e-12, window)
    if edges[-1] < times[-1] - 1e-12:
        edges = np.append(edges, times[-1])
    return np.diff(np.interp(edges, times, cumulative))


def cumulative_balance(records: Sequence[StepRecord]) -> float:
    """sum |r_n| a lo largo de una corrida."""
    return float(sum(abs(r.energy.balance_residual) for r in records))


def potential_energy(u: PlateField, params: ModelParams) -> float:
    """Parte potencial de E_pl (sin el termino cinetico)."""
    record = plate_energy(PlateState(u, PlateField.zeros(u.grid), 0.0), params)
    return record.e_pl


def energy_floor(
    params: ModelParams, restarts: int = 6, seed: int = 0, amplitude: float = 1.0
) -> float:
    """
    Cota inferior empirica de la parte potencial de E_pl.

    Minimiza con L-BFGS-B desde arranques aleatorios; devuelve el menor valor hallado.
    """
    grid = params.grid
    ops = plate_operators(grid)
    area = grid.cell_area
    p0 = params.p0.interior
    F0 = params.F0.interior
    rng = np.random.default_rng(seed)

    def objective(x: np.ndarray) -> tuple[float, np.ndarray]:
        u = PlateField.from_interior(grid, x)
        Bu = ops.bending @ x
        value = 0.5 * area * float(x @ Bu) + area * float(p0 @ x)
        gradient = area * (Bu + p0)
        if params.nonlinear:
            curvatures = interior_curvatures(u)
            rhs = ops.stress_apply(curvatures, x)
            stress = -bending_solver(grid).solve(rhs)
            value += -0.25 * area * float(stress @ rhs) - area * float(F0 @ rhs)
            gradient += -area * (
                ops.stress_adjoint(curvatures, stress) + 2.0 * ops.stress_adjoint(curvatures, F0)
            )
        return value, gradient

    best = 0.0
    for attempt in range(restarts):
        x0 = amplitude * rng.standard_normal(grid.n_interior) * (1.0 + attempt)
        result = minimize(objective, x0, jac=True, method="L-BFGS-B")
        best = min(best, potential_energy(PlateField.from_interior(grid, result.x), params))
        logger.debug(f"energy_floor arranque {attempt}: {result.fun:.6e} ({result.message})")

    logger.info(f"Cota inferior de energia estimada: {best:.6e}")
    return best
