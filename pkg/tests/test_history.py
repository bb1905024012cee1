"""
Tests del historial de estados.
"""

import numpy as np
import pytest

from app.errors import ConfigError, HistoryUnderflowError
from app.services.history import HistoryBuffer
from app.services.plate import Grid, PlateField, PlateState
from tests.conftest import random_clamped


def _state(grid: Grid, rng, t: float) -> PlateState:
    return PlateState(random_clamped(grid, rng), random_clamped(grid, rng), t)


def test_flat_prehistory_covers_horizon(grid: Grid, rng):
    """Test de prehistoria plana sobre [t0 - t*, t0]."""
    state = _state(grid, rng, 0.0)
    history = HistoryBuffer.flat(state, dt=0.1, horizon=0.35)
    assert history.covers(-0.35, 0.0)
    sample = history.sample(-0.23)
    np.testing.assert_allclose(sample.u.values, state.u.values, rtol=1e-15, atol=1e-15)


def test_linear_interpolation(grid: Grid, rng):
    """Test de interpolacion lineal entre instantaneas."""
    a = _state(grid, rng, 0.0)
    b = _state(grid, rng, 0.5)
    history = HistoryBuffer(grid, 0.5)
    history.append(a)
    history.append(b)
    mid = history.sample(0.125)
    expected = 0.75 * a.u.values + 0.25 * b.u.values
    np.testing.assert_allclose(mid.u.values, expected, atol=1e-14)


def test_non_uniform_step_rejected(grid: Grid, rng):
    """Test de paso no uniforme."""
    history = HistoryBuffer(grid, 0.1)
    history.append(_state(grid, rng, 0.0))
    with pytest.raises(ConfigError):
        history.append(_state(grid, rng, 0.25))


def test_underflow(grid: Grid, rng):
    """Test de consulta fuera de la ventana almacenada."""
    history = HistoryBuffer.flat(_state(grid, rng, 1.0), dt=0.1)
    with pytest.raises(HistoryUnderflowError):
        history.sample(0.5)


def test_eviction_keeps_window(grid: Grid, rng):
    """Test de descarte: conserva t* + 2 dt hacia atras."""
    history = HistoryBuffer(grid, 0.1, horizon=0.3)
    for k in range(20):
        history.append(_state(grid, rng, 0.1 * k))
    assert history.covers(1.9 - 0.3, 1.9)
    assert history.t_start == pytest.approx(1.9 - 0.5)


def test_copy_is_independent(grid: Grid, rng):
    """Test de copia independiente."""
    history = HistoryBuffer.flat(_state(grid, rng, 0.0), dt=0.1, horizon=0.2)
    clone = history.copy()
    clone.append(_state(grid, rng, 0.1))
    assert len(clone) == len(history) + 1


def test_npz_round_trip(grid: Grid, rng, tmp_path):
    """Test de guardado y carga de prehistoria."""
    history = HistoryBuffer(grid, 0.05)
    for k in range(4):
        history.append(_state(grid, rng, 0.05 * k))
    path = tmp_path / "prehistory.npz"
    history.to_npz(path)

    loaded = HistoryBuffer.from_npz(path, grid)
    assert loaded.dt == pytest.approx(0.05)
    np.testing.assert_array_equal(loaded.latest.u, history.latest.u)


def test_npz_wrong_grid(grid: Grid, rng, tmp_path):
    """Test de prehistoria con malla incompatible."""
    history = HistoryBuffer(grid, 0.05)
    history.append(_state(grid, rng, 0.0))
    history.append(_state(grid, rng, 0.05))
    path = tmp_path / "prehistory.npz"
    history.to_npz(path)
    with pytest.raises(ConfigError):
        HistoryBuffer.from_npz(path, Grid(9, 9))


def test_zero_state_curvatures(grid: Grid):
    """Test de curvaturas nulas en estado nulo."""
    history = HistoryBuffer.flat(PlateState.zeros(grid), dt=0.1, horizon=0.2)
    curvatures = history.sample_curvatures(np.array([-0.2, -0.05, 0.0]))
    assert curvatures.shape == (3, 3, *grid.shape)
    assert not curvatures.any()
    assert isinstance(history.sample(0.0).u, PlateField)
