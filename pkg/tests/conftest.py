"""
Fixtures compartidas de los tests.
"""

import numpy as np
import pytest

from app.services.plate import Grid, PlateField


@pytest.fixture
def grid() -> Grid:
    """Malla pequena no cuadrada."""
    return Grid(9, 11, 1.0, 1.2)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def random_clamped(grid: Grid, rng: np.random.Generator, scale: float = 1.0) -> PlateField:
    """Campo aleatorio con frontera nula."""
    return PlateField.from_interior(grid, scale * rng.standard_normal(grid.n_interior))
