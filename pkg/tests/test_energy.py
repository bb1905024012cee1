"""
Tests de los diagnosticos de energia.
"""

import numpy as np
import pytest

from app.services.aero import ModelParams
from app.services.checks import check_energy_balance
from app.services.energy import (
    dissipation_from_samples,
    dissipation_integral,
    energy_floor,
    plate_energy,
    potential_energy,
    window_contributions,
)
from app.services.integrator import run
from app.services.plate import Grid, PlateField, PlateState, bending_eigenpairs
from app.services.stationary import critical_load, load_shape


def test_zero_state_energy(grid: Grid):
    """Test de energia nula en el estado nulo."""
    record = plate_energy(PlateState.zeros(grid), ModelParams.unloaded(grid))
    assert record.e_pl == 0.0


def test_linear_plate_omits_airy(grid: Grid):
    """Test de placa lineal: sin termino de Airy ni trabajo en el plano."""
    _, (mode,) = bending_eigenpairs(grid, 1)
    params = ModelParams.unloaded(grid, nonlinear=False)
    record = plate_energy(PlateState(mode, mode * 0.0, 0.0), params)
    assert record.airy == 0.0
    assert record.inplane_work == 0.0
    assert record.bending > 0


def test_dissipation_from_samples():
    """Test del trapecio de k ||u_t||^2."""
    times = np.linspace(0.0, 2.0, 201)
    assert dissipation_from_samples(times, np.ones_like(times), 0.5) == pytest.approx(1.0)
    assert dissipation_from_samples(times[:1], np.ones(1), 0.5) == 0.0


def test_window_contributions_add_up():
    """Test de que las ventanas suman la integral de disipacion."""
    grid = Grid(9, 9)
    _, (mode,) = bending_eigenpairs(grid, 1)
    params = ModelParams.unloaded(grid, closure="in_vacuo", nonlinear=False, k=1.0)
    trajectory = run(PlateState(mode * 0.1, mode * 0.1, 0.0), "flat", params, 0.002, 0.1)

    contributions = window_contributions(trajectory, 0.03)
    assert len(contributions) == 4
    assert contributions.sum() == pytest.approx(dissipation_integral(trajectory), rel=1e-10)
    assert trajectory.column("diss_cum")[-1] == pytest.approx(
        dissipation_integral(trajectory), rel=1e-10
    )


def test_energy_floor_unloaded():
    """Test de cota inferior sin cargas: la energia potencial no es negativa."""
    params = ModelParams.unloaded(Grid(7, 7))
    assert -1e-12 <= energy_floor(params, restarts=2) <= 0.0


def test_energy_floor_bounds_trajectory():
    """Test de cota inferior con compresion supercritica, nunca violada en la corrida."""
    grid = Grid(7, 7)
    critical, mode = critical_load(grid, "uniaxial")
    params = ModelParams(
        U=0.0,
        p0=PlateField.zeros(grid, "free"),
        F0=load_shape(grid, "uniaxial", 1.5 * critical),
        closure="in_vacuo",
        k=1.0,
    )
    floor = energy_floor(params, restarts=3)
    assert floor < 0.0
    assert floor <= potential_energy(mode * 0.0, params)

    initial = PlateState(mode * 0.05, mode * 0.0, 0.0)
    trajectory = run(initial, "flat", params, 0.002, 0.5, stride=25)
    potentials = [potential_energy(state.u, params) for state in trajectory.states]
    assert min(potentials) >= floor - 1e-9 * abs(floor)


@pytest.mark.slow
def test_energy_balance_order():
    """Test del orden observado del residuo de balance bajo refinamiento de dt."""
    outcome = check_energy_balance()
    assert outcome.status == "pass", outcome.detail
