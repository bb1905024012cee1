"""
Tests del solver de equilibrios.
"""

import numpy as np
import pytest

from app.errors import ConfigError
from app.services.aero import ModelParams
from app.services.checks import check_buckling_onset
from app.services.plate import Grid, PlateField, bending_solver, h2_norm
from app.services.stationary import (
    StationaryProblem,
    continuation,
    critical_load,
    load_shape,
    newton_solve,
    static_residual,
)


@pytest.fixture
def plate_grid() -> Grid:
    return Grid(9, 9)


def _pressure_params(grid: Grid, amplitude: float, nonlinear: bool = True) -> ModelParams:
    return ModelParams(
        U=0.0,
        p0=load_shape(grid, "uniform", amplitude),
        F0=PlateField.zeros(grid, "free"),
        closure="in_vacuo",
        nonlinear=nonlinear,
    )


def test_unloaded_equilibrium_is_zero(plate_grid: Grid):
    """Test de equilibrio nulo sin cargas."""
    params = ModelParams.unloaded(plate_grid)
    u = newton_solve(PlateField.zeros(plate_grid), params)
    assert not u.values.any()


def test_linear_pressure_equilibrium(plate_grid: Grid):
    """Test de placa lineal bajo presion: B u = p0."""
    params = _pressure_params(plate_grid, 10.0, nonlinear=False)
    u = newton_solve(PlateField.zeros(plate_grid), params)
    expected = bending_solver(plate_grid).solve(params.p0.interior)
    np.testing.assert_allclose(u.interior, expected, rtol=1e-8, atol=1e-12)


def test_nonlinear_pressure_residual(plate_grid: Grid):
    """Test de residuo del equilibrio no lineal bajo presion."""
    params = _pressure_params(plate_grid, 200.0)
    u = newton_solve(PlateField.zeros(plate_grid), params)
    problem = StationaryProblem(params)
    assert problem.dual_norm(static_residual(u, params).interior) <= 1e-8
    # La rigidez de membrana reduce la flecha respecto de la placa lineal
    linear = bending_solver(plate_grid).solve(params.p0.interior)
    assert np.abs(u.interior).max() < np.abs(linear).max()


def test_critical_load(plate_grid: Grid):
    """Test de carga critica uniaxial positiva y modo normalizado."""
    critical, mode = critical_load(plate_grid, "uniaxial")
    assert critical > 0
    assert np.abs(mode.values).max() == pytest.approx(1.0)


def test_sweep_must_be_monotone(plate_grid: Grid):
    """Test de barrido no monotono."""
    params = _pressure_params(plate_grid, 1.0)
    with pytest.raises(ConfigError):
        continuation(params, "pressure", [1.0, 3.0, 2.0])


def test_pressure_sweep_without_hysteresis(plate_grid: Grid):
    """Test de barrido ascendente y descendente sobre la misma rama."""
    params = _pressure_params(plate_grid, 1.0)
    up = continuation(params, "pressure", [10.0, 50.0, 100.0])
    down = continuation(params, "pressure", [100.0, 50.0, 10.0])
    assert not up.failures and not down.failures
    np.testing.assert_allclose(up.norms, down.norms[::-1], rtol=1e-6)
    assert np.all(np.diff(up.norms) > 0)


def test_trivial_branch_loses_stability(plate_grid: Grid):
    """Test del cambio de signo de estabilidad de la rama trivial en la carga critica."""
    critical, _ = critical_load(plate_grid, "uniaxial")
    params = ModelParams(
        U=0.0,
        p0=PlateField.zeros(plate_grid, "free"),
        F0=load_shape(plate_grid, "uniaxial"),
        closure="in_vacuo",
    )
    branch = continuation(params, "load", critical * np.array([0.5, 0.8, 1.2, 1.5]))
    stabilities = [p.trivial_stability for p in branch.points]
    assert stabilities[0] > 0 and stabilities[1] > 0
    assert stabilities[-1] < 0
    onset = branch.onset()
    assert onset is not None
    assert 0.8 * critical < onset < 1.5 * critical


def test_buckled_equilibria_come_in_mirror_pairs(plate_grid: Grid):
    """Test de equilibrios u y -u tras el pandeo sin presion ni flujo."""
    critical, _ = critical_load(plate_grid, "uniaxial")
    params = ModelParams(
        U=0.0,
        p0=PlateField.zeros(plate_grid, "free"),
        F0=load_shape(plate_grid, "uniaxial", 1.5 * critical),
        closure="in_vacuo",
    )
    branch = continuation(params, "load", [1.0])
    assert not branch.failures
    buckled = branch.points[0].u
    assert h2_norm(buckled) > 1e-3

    u_plus = newton_solve(buckled * 1.1, params)
    u_minus = newton_solve(buckled * -1.1, params)
    np.testing.assert_allclose(u_plus.values, buckled.values, atol=1e-6)
    np.testing.assert_allclose(u_minus.values, -u_plus.values, atol=1e-8)
    problem = StationaryProblem(params)
    assert problem.dual_norm(static_residual(u_minus, params).interior) <= 1e-8


def test_flow_breaks_mirror_symmetry(plate_grid: Grid):
    """Test de asimetria en x de los equilibrios al crecer U con presion simetrica."""
    params = ModelParams(
        U=0.0,
        p0=load_shape(plate_grid, "uniform", 10.0),
        F0=PlateField.zeros(plate_grid, "free"),
        closure="piston_classical",
    )
    branch = continuation(params, "U", [0.0, 2.0, 4.0])
    assert not branch.failures
    asymmetry = np.abs([p.asymmetry for p in branch.points])
    assert asymmetry[0] < 1e-10
    assert asymmetry[1] > 1e-6
    assert asymmetry[2] > asymmetry[1]


def test_branch_frame_columns(plate_grid: Grid):
    """Test de columnas del CSV de la rama."""
    params = _pressure_params(plate_grid, 1.0)
    frame = continuation(params, "pressure", [1.0, 2.0]).to_frame()
    assert frame.columns == [
        "parameter",
        "value",
        "h2_norm",
        "residual",
        "iterations",
        "stability",
        "trivial_stability",
        "asymmetry",
    ]
    assert frame.height == 2


@pytest.mark.slow
def test_buckling_onset_against_eigenvalue():
    """Test de deteccion del pandeo contra el autovalor generalizado denso."""
    outcome = check_buckling_onset()
    assert outcome.status == "pass", outcome.detail
