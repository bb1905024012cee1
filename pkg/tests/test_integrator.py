"""
Tests del integrador en el tiempo.
"""

import numpy as np
import pytest

from app.errors import ConfigError
from app.services.aero import ModelParams, delay_horizon
from app.services.checks import check_restart
from app.services.integrator import default_dt, lco_drift, run
from app.services.plate import Grid, PlateField, PlateState, bending_eigenpairs


@pytest.fixture
def small_grid() -> Grid:
    return Grid(9, 9)


def _mode_state(grid: Grid, amplitude: float, velocity: float = 0.0) -> PlateState:
    _, (mode,) = bending_eigenpairs(grid, 1)
    return PlateState(mode * amplitude, mode * velocity, 0.0)


def test_linear_in_vacuo_conserves_energy(small_grid: Grid):
    """Test de conservacion exacta de energia en la placa lineal sin amortiguamiento."""
    params = ModelParams.unloaded(small_grid, closure="in_vacuo", nonlinear=False)
    trajectory = run(_mode_state(small_grid, 0.1, 0.05), "flat", params, 0.002, 0.2)
    energy = trajectory.column("e_pl")
    assert np.ptp(energy) < 1e-10 * energy[0]


def test_damping_dissipates_energy(small_grid: Grid):
    """Test de energia no creciente con amortiguamiento estructural."""
    params = ModelParams.unloaded(small_grid, closure="in_vacuo", nonlinear=False, k=2.0)
    trajectory = run(_mode_state(small_grid, 0.1, 0.05), "flat", params, 0.002, 0.2)
    energy = trajectory.column("e_pl")
    assert np.all(np.diff(energy) <= 1e-12 * energy[0])
    assert energy[-1] < energy[0]
    assert trajectory.column("diss_cum")[-1] > 0


def test_nonlinear_balance_residual_small(small_grid: Grid):
    """Test del residuo de balance en la placa no lineal con piston."""
    params = ModelParams.unloaded(small_grid, U=2.0, k=0.1)
    trajectory = run(_mode_state(small_grid, 0.2), "flat", params, 0.001, 0.05)
    residual = np.abs(trajectory.column("balance_residual"))
    assert residual.max() < 1e-3 * trajectory.column("e_pl")[0]


def test_zero_state_stays_zero(small_grid: Grid):
    """Test de estado nulo sin carga: la solucion sigue nula."""
    params = ModelParams.unloaded(small_grid, U=2.0)
    trajectory = run(PlateState.zeros(small_grid), "flat", params, 0.001, 0.01)
    assert not trajectory.final.u.values.any()
    assert not trajectory.final.v.values.any()


def test_stride_and_absolute_end_time(small_grid: Grid):
    """Test de muestreo cada stride pasos y del instante final absoluto."""
    params = ModelParams.unloaded(small_grid, U=0.5)
    dt = 0.001
    trajectory = run(_mode_state(small_grid, 0.01), "flat", params, dt, 0.02, stride=5)
    assert len(trajectory.records) == 21
    assert len(trajectory.states) == 5
    assert trajectory.final.t == pytest.approx(0.02)


def test_end_time_before_start(small_grid: Grid):
    """Test de T anterior al instante inicial."""
    params = ModelParams.unloaded(small_grid)
    with pytest.raises(ConfigError):
        run(PlateState.zeros(small_grid), "flat", params, 0.01, 0.0)


def test_delayed_step_too_large(small_grid: Grid):
    """Test de dt > t*/8 con el cierre con retardo."""
    params = ModelParams.unloaded(small_grid, U=2.0, closure="delayed")
    dt = delay_horizon(small_grid, 2.0) / 4
    with pytest.raises(ConfigError):
        run(PlateState.zeros(small_grid), "flat", params, dt, 10 * dt)


def test_restart_is_bitwise():
    """Test de reanudacion bit a bit con el cierre con retardo."""
    outcome = check_restart()
    assert outcome.status == "pass"


def test_restart_piston(small_grid: Grid):
    """Test de reanudacion bit a bit con piston clasico."""
    params = ModelParams.unloaded(small_grid, U=2.0, k=0.1)
    dt = default_dt(small_grid)
    initial = _mode_state(small_grid, 0.1)
    contiguous = run(initial, "flat", params, dt, 30 * dt)
    first = run(initial, "flat", params, dt, 10 * dt)
    second = run(first.final, first.history, params, dt, 30 * dt)
    np.testing.assert_array_equal(contiguous.final.u.values, second.final.u.values)
    np.testing.assert_array_equal(contiguous.final.v.values, second.final.v.values)


def test_lco_drift_needs_peaks(small_grid: Grid):
    """Test de deriva sin suficientes maximos."""
    params = ModelParams.unloaded(small_grid, U=0.5)
    trajectory = run(PlateState.zeros(small_grid), "flat", params, 0.001, 0.005)
    assert np.isnan(lco_drift(trajectory))


def test_split_run_keeps_dissipation(small_grid: Grid):
    """Test de disipacion acumulada igual en una corrida partida y en una continua."""
    params = ModelParams.unloaded(small_grid, U=2.0, k=0.5)
    dt = default_dt(small_grid)
    initial = _mode_state(small_grid, 0.1, 0.2)
    contiguous = run(initial, "flat", params, dt, 30 * dt)
    first = run(initial, "flat", params, dt, 10 * dt)
    second = run(first.final, first.history, params, dt, 30 * dt)

    assert first.column("diss_cum")[-1] > 0
    assert second.column("diss_cum")[0] == first.column("diss_cum")[-1]
    np.testing.assert_allclose(
        second.column("diss_cum"), contiguous.column("diss_cum")[10:], rtol=1e-12
    )
    assert second.history.diss_cum == second.column("diss_cum")[-1]


def test_manufactured_solution_second_order(small_grid: Grid):
    """Test de orden 2 con solucion fabricada u = sin(t) phi y fuente externa."""
    values, (mode,) = bending_eigenpairs(small_grid, 1)
    lam = float(values[0])
    params = ModelParams.unloaded(small_grid, closure="in_vacuo", nonlinear=False)

    def source(t: float) -> PlateField:
        # u_tt + B u = (lam - 1) sin(t) phi
        return mode * ((lam - 1.0) * np.sin(t))

    initial = PlateState(PlateField.zeros(small_grid), mode * 1.0, 0.0)
    exact = (mode * np.sin(0.5)).values
    errors = []
    for dt in (0.004, 0.002, 0.001):
        trajectory = run(initial, "flat", params, dt, 0.5, stride=10**6, source=source)
        errors.append(np.abs(trajectory.final.u.values - exact).max())

    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert errors[-1] < 1e-3
    assert orders.min() >= 1.9
