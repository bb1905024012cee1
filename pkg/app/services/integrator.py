"""
Integracion temporal de la placa.

Esquema semi-implicito: Crank-Nicolson para Delta^2, el amortiguamiento k y la parte
u_t del cierre aerodinamico; Adams-Bashforth 2 para f(u) y el resto del forzamiento.

    S v^{n+1} = (M - dt^2/4 B - dt c/2) v^n - dt B u^n + dt G^{n+1/2}
    u^{n+1}   = u^n + dt/2 (v^n + v^{n+1})

con M = 1 - alpha Delta, c = k + c_aero, S = M + dt^2/4 B + dt c/2 y
G^{n+1/2} = 3/2 G^n - 1/2 G^{n-1}, G = -f(u) + forzamiento explicito.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp
from scipy.signal import find_peaks

from app.config import get_settings
from app.errors import ConfigError, DivergenceError
from app.services.aero import (
    DelayQuadrature,
    ModelParams,
    aero_damping,
    delay_horizon,
    explicit_forcing,
)
from app.services.energy import (
    BalanceWindow,
    EnergyRecord,
    StepRecord,
    balance_residual,
    plate_energy,
)
from app.services.history import HistoryBuffer
from app.services.plate import (
    Grid,
    LinearSolver,
    PlateField,
    PlateState,
    h2_norm,
    l2_norm,
    plate_operators,
    vk_force_parts,
)

logger = logging.getLogger(__name__)

Source = Callable[[float], PlateField]


@dataclass
class Forcing:
    """Forzamiento evaluado en un nivel de tiempo."""

    force: np.ndarray  # G = -f(u) + explicito
    aero: np.ndarray  # explicito (incluye p0)
    stress: PlateField | None = None


@dataclass
class Trajectory:
    """Resultado de una corrida: estados muestreados y registros de cada paso."""

    grid: Grid
    dt: float
    params: ModelParams
    quad: DelayQuadrature | None
    states: list[PlateState] = field(default_factory=list)
    records: list[StepRecord] = field(default_factory=list)
    history: HistoryBuffer | None = None

    @property
    def final(self) -> PlateState:
        return self.states[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def column(self, name: str) -> np.ndarray:
        """Serie temporal de una columna del registro."""
        return np.array([r.as_row()[name] for r in self.records])


def default_dt(grid: Grid) -> float:
    """Paso por defecto 0.25 min(hx, hy)^2."""
    return 0.25 * min(grid.hx, grid.hy) ** 2


def probe_index(grid: Grid) -> tuple[int, int]:
    """Nodo de observacion a 3/4 de la cuerda y mitad de la envergadura."""
    return (3 * (grid.nx - 1)) // 4, (grid.ny - 1) // 2


@lru_cache(maxsize=16)
def _step_operators(
    grid: Grid, dt: float, damping: float, alpha: float, method: str
) -> tuple[sp.csr_matrix, LinearSolver]:
    """Matriz explicita y solver implicito del paso, cacheados."""
    ops = plate_operators(grid)
    identity = sp.identity(grid.n_interior, format="csr")
    mass = identity - alpha * ops.laplacian_dirichlet
    quarter = 0.25 * dt**2
    implicit = (mass + quarter * ops.bending + 0.5 * dt * damping * identity).tocsr()
    explicit = (mass - quarter * ops.bending - 0.5 * dt * damping * identity).tocsr()
    logger.debug(f"Factorizando operador de paso dt={dt}, c={damping}, alpha={alpha}")
    return explicit, LinearSolver(implicit, method, "paso implicito")


def evaluate_forcing(
    state: PlateState,
    history: HistoryBuffer | None,
    params: ModelParams,
    quad: DelayQuadrature | None,
    index: int = 0,
) -> Forcing:
    """G = -f(u) + forzamiento explicito en el estado dado."""
    try:
        aero = explicit_forcing(state, history, params, quad).values
        if params.nonlinear:
            force_field, stress = vk_force_parts(state.u, params.F0)
            force = aero - force_field.values
        else:
            stress = None
            force = aero.copy()
    except ValueError as e:
        raise DivergenceError(index, f"Forzamiento no finito en el paso {index}: {e}") from e
    return Forcing(force=force, aero=aero, stress=stress)


def _ensure_forcing(
    state: PlateState,
    history: HistoryBuffer,
    params: ModelParams,
    quad: DelayQuadrature | None,
    index: int = 0,
) -> Forcing:
    """Reutiliza el forzamiento guardado en el historial o lo evalua y lo guarda."""
    latest = history.latest
    if abs(latest.t - state.t) > 1e-9 * max(1.0, abs(state.t)):
        raise ConfigError(
            f"El historial termina en t={latest.t} pero el estado esta en t={state.t}"
        )
    if latest.force is None:
        forcing = evaluate_forcing(state, history, params, quad, index)
        history.record_forcing(forcing.force, forcing.aero)
        return forcing
    return Forcing(force=latest.force, aero=latest.aero)


def step(
    state: PlateState,
    history: HistoryBuffer,
    params: ModelParams,
    dt: float,
    quad: DelayQuadrature | None = None,
    source: Source | None = None,
    index: int = 0,
) -> PlateState:
    """
    Avanza un paso y agrega el nuevo estado al historial.

    El historial debe terminar en el estado actual; la memoria de Adams-Bashforth se
    toma de la instantanea anterior (o se reduce a Euler en el primer paso).
    """
    if dt <= 0:
        raise ConfigError(f"dt debe ser positivo (recibido {dt})")
    grid = state.grid
    ops = plate_operators(grid)

    current = _ensure_forcing(state, history, params, quad, index).force
    previous = history.previous()
    prior = previous.force if previous is not None and previous.force is not None else current
    half = 1.5 * current - 0.5 * prior
    if source is not None:
        half = half + source(state.t + 0.5 * dt).values

    damping = params.k + aero_damping(params)
    explicit, solver = _step_operators(
        grid, float(dt), float(damping), float(params.alpha), get_settings().linear_solver
    )

    u = state.u.interior
    v = state.v.interior
    g = half[1:-1, 1:-1].ravel()
    rhs = explicit @ v - dt * (ops.bending @ u) + dt * g
    if not np.all(np.isfinite(rhs)):
        raise DivergenceError(index)

    v_new = solver.solve(rhs)
    u_new = u + 0.5 * dt * (v + v_new)
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
        raise DivergenceError(index)

    new_state = PlateState(
        PlateField.from_interior(grid, u_new),
        PlateField.from_interior(grid, v_new),
        state.t + dt,
    )
    history.append(new_state)
    return new_state


def _total_forcing(
    forcing: Forcing,
    state: PlateState,
    params: ModelParams,
    source: Source | None,
) -> PlateField:
    """Forzamiento total R = explicito - c_aero u_t (+ fuente)."""
    values = forcing.aero - aero_damping(params) * state.v.values
    if source is not None:
        values = values + source(state.t).values
    return PlateField(state.grid, values, "free")


def _step_record(
    state: PlateState, energy: EnergyRecord, total: PlateField
) -> StepRecord:
    i, j = probe_index(state.grid)
    return StepRecord(
        energy=energy,
        h2_norm=h2_norm(state.u),
        ut_norm=l2_norm(state.v),
        forcing_norm=l2_norm(total),
        probe=float(state.u.values[i, j]),
    )


def resolve_quadrature(
    params: ModelParams, dt: float, quad: DelayQuadrature | None = None
) -> DelayQuadrature | None:
    """Cuadratura del retardo (solo cierre con retardo) y tope dt <= t*/8."""
    if params.closure != "delayed":
        return quad
    if quad is None:
        quad = DelayQuadrature.default(delay_horizon(params.grid, params.U), dt)
    if dt > quad.t_star / 8.0 + 1e-15:
        raise ConfigError(f"dt={dt} excede t*/8 = {quad.t_star / 8.0:.6g} para el cierre con retardo")
    return quad


def run(
    initial: PlateState,
    prehistory: HistoryBuffer | Literal["flat"] | None,
    params: ModelParams,
    dt: float,
    T: float,
    quad: DelayQuadrature | None = None,
    stride: int = 1,
    source: Source | None = None,
) -> Trajectory:
    """
    Integra desde initial.t hasta el instante absoluto T.

    Los registros de energia se toman en cada paso; los estados cada `stride` pasos
    (incluidos el inicial y el final). La trayectoria devuelve el historial avanzado,
    con el que una segunda corrida reanuda bit a bit.
    """
    if T <= initial.t:
        raise ConfigError(f"T={T} debe ser mayor que el instante inicial {initial.t}")
    if stride < 1:
        raise ConfigError(f"stride debe ser >= 1 (recibido {stride})")

    grid = initial.grid
    quad = resolve_quadrature(params, dt, quad)
    horizon = quad.t_star if quad is not None and params.closure == "delayed" else 0.0

    if isinstance(prehistory, HistoryBuffer):
        if abs(prehistory.dt - dt) > 1e-12 * dt:
            raise ConfigError(f"El paso de la prehistoria ({prehistory.dt}) difiere de dt={dt}")
        history = prehistory.copy()
        history.horizon = max(history.horizon, horizon)
    else:
        history = HistoryBuffer.flat(initial, dt, horizon)

    n_steps = round((T - initial.t) / dt)
    if n_steps < 1:
        raise ConfigError(f"El intervalo [{initial.t}, {T}] es menor que un paso dt={dt}")

    trajectory = Trajectory(grid=grid, dt=dt, params=params, quad=quad, history=history)
    logger.info(
        f"Corrida {params.closure}: malla {grid.nx}x{grid.ny}, U={params.U}, k={params.k}, "
        f"dt={dt:.3e}, {n_steps} pasos"
    )

    state = initial
    forcing = _ensure_forcing(state, history, params, quad)
    energy = plate_energy(state, params, forcing.stress)
    diss_cum = history.diss_cum
    energy.diss_cum = diss_cum
    total = _total_forcing(forcing, state, params, source)
    trajectory.records.append(_step_record(state, energy, total))
    trajectory.states.append(state)

    report_every = max(1, n_steps // 10)

    for n in range(n_steps):
        new_state = step(state, history, params, dt, quad=quad, source=source, index=n)
        new_forcing = _ensure_forcing(new_state, history, params, quad, n + 1)
        new_energy = plate_energy(new_state, params, new_forcing.stress)
        new_total = _total_forcing(new_forcing, new_state, params, source)

        diss_cum += params.k * dt * 0.5 * (l2_norm(state.v) ** 2 + l2_norm(new_state.v) ** 2)
        new_energy.diss_cum = diss_cum
        new_energy.balance_residual = balance_residual(
            BalanceWindow(state, new_state, total, new_total),
            params,
            records=(energy, new_energy),
        )
        trajectory.records.append(_step_record(new_state, new_energy, new_total))

        if (n + 1) % stride == 0 or n + 1 == n_steps:
            trajectory.states.append(new_state)
        if (n + 1) % report_every == 0:
            logger.info(
                f"Paso {n + 1}/{n_steps}: t={new_state.t:.4f}, "
                f"|u_t|={trajectory.records[-1].ut_norm:.3e}, E_pl={new_energy.e_pl:.6e}"
            )

        state, energy, total = new_state, new_energy, new_total
        history.diss_cum = diss_cum

    return trajectory


def lco_drift(trajectory: Trajectory, tail: float = 0.5) -> float:
    """
    Deriva relativa de la amplitud por periodo en la parte final de la corrida.

    Usa los maximos locales de la senal del punto de observacion; devuelve NaN si hay
    menos de tres maximos.
    """
    times = trajectory.times
    signal = trajectory.column("probe")
    start = times[0] + (1.0 - tail) * (times[-1] - times[0])
    mask = times >= start
    peaks, _ = find_peaks(np.abs(signal[mask]))
    amplitudes = np.abs(signal[mask][peaks])
    if len(amplitudes) < 3:
        return math.nan
    return float(np.max(np.abs(np.diff(amplitudes)) / amplitudes[:-1]))
