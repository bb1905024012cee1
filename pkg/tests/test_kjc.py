"""
Tests del analisis de Kutta-Joukowsky: simbolos, Hilbert finita y downwash.
"""

import numpy as np
import pytest
from numpy.polynomial import chebyshev as cheb

from app.errors import DomainError, SingularPointError
from app.services.kjc import (
    IntervalFunction,
    IntervalSeries,
    SymbolPoint,
    chebyshev_nodes,
    downwash_to_potential,
    duality_table,
    finite_hilbert,
    finite_hilbert_evaluate,
    finite_hilbert_invert,
    homogeneity_table,
    homogeneous_coefficient,
    hilbert_round_trip_table,
    manufactured_potential,
    multiplier_m,
    potential_to_downwash,
    r_limits,
    r_strip_table,
    r_symbol,
    random_smooth_function,
)


def test_multiplier_homogeneous_of_degree_zero():
    """Test de m(lambda eta, lambda tau) = m(eta, tau)."""
    table = homogeneity_table(n_points=200, seed=3)
    assert table.height == 200
    assert table["defect"].max() <= 1e-15


def test_multiplier_singular_point():
    """Test del denominador nulo tau + i U eta_x = 0."""
    with pytest.raises(SingularPointError):
        multiplier_m(SymbolPoint(eta_x=0.0, eta_y=1.0, tau=0j, U=0.5))


def test_r_symbol_requires_nonzero_eta():
    """Test de r con eta = 0."""
    with pytest.raises(DomainError):
        r_symbol(0.5, 0.0, 1.0, 0.5)


@pytest.mark.parametrize("U", [0.5, 2.0])
def test_r_limits(U: float):
    """Test de los limites de r a |z| = 1e6."""
    limits = r_limits(U)
    assert abs(r_symbol(1e6, 1.0, 1.0, U) - limits["plus_infinity"]) < 1e-4
    assert abs(r_symbol(-1e6, 1.0, 1.0, U) - limits["minus_infinity"]) < 1e-4
    assert abs(r_symbol(0.0, 1e6, 1.0, U) - limits["zero"]) < 1e-4


def test_r_strip_bounded():
    """Test de |r sqrt(eta)| acotado por ambos lados en la franja caracteristica."""
    values = r_strip_table()["abs_r_sqrt_eta"]
    assert values.min() > 0
    assert np.isfinite(values.max())


def test_hilbert_of_constant():
    """Test de H_f 1 = (1/pi) log((1 - x)/(1 + x))."""
    w = IntervalFunction.sample(np.ones_like, 32)
    x = np.linspace(-0.9, 0.9, 11)
    expected = np.log((1.0 - x) / (1.0 + x)) / np.pi
    np.testing.assert_allclose(finite_hilbert_evaluate(w, x), expected, atol=1e-12)


def test_hilbert_of_weighted_chebyshev():
    """Test de H_f(T_2 / sqrt(1 - x^2)) = U_1 = 2x."""
    w = IntervalFunction.sample(lambda x: 2.0 * x**2 - 1.0, 16, tag="singular")
    x = np.linspace(-0.9, 0.9, 7)
    np.testing.assert_allclose(finite_hilbert_evaluate(w, x), 2.0 * x, atol=1e-12)


def test_homogeneous_mode_annihilated():
    """Test de H_f(c / sqrt(1 - x^2)) = 0."""
    w = IntervalFunction.sample(lambda x: 3.0 * np.ones_like(x), 64, tag="singular")
    assert np.abs(finite_hilbert(w).values).max() < 1e-12
    assert homogeneous_coefficient(w) == pytest.approx(3.0)


def test_inversion_round_trip():
    """Test de H_f(H_f^{-1} h) = h en el interior."""
    table = hilbert_round_trip_table(node_counts=(64,), n_functions=3, seed=1)
    assert table["max_interior_residual"][0] < 1e-6
    assert table["homogeneous_image"][0] < 1e-10


def test_inversion_representative_and_kutta():
    """Test de la representante sin modo homogeneo y de la condicion de Kutta."""
    h = IntervalFunction.sample(random_smooth_function(np.random.default_rng(5)), 48)
    plain = finite_hilbert_invert(h)
    kutta = finite_hilbert_invert(h, kutta=True)
    assert homogeneous_coefficient(plain) == pytest.approx(0.0, abs=1e-12)
    # Difieren solo en la constante homogenea
    assert np.ptp(kutta.values - plain.values) < 1e-10
    # Con Kutta la funcion g de w = g / sqrt(1 - x^2) se anula en x = 1
    g_at_one = cheb.chebval(1.0, kutta.coefficients())
    assert abs(g_at_one) < 1e-8 * np.abs(kutta.values).max()


def test_inversion_outside_lp_range():
    """Test de inversion con p fuera de (1, 2)."""
    h = IntervalFunction.sample(np.cos, 16)
    with pytest.raises(DomainError):
        finite_hilbert_invert(h, p=2.0)


def test_interval_function_needs_nodes():
    """Test de funcion con menos de 4 nodos."""
    with pytest.raises(DomainError):
        IntervalFunction(chebyshev_nodes(3), np.zeros(3))


def test_downwash_inversion_reproduces_downwash():
    """Test de que el potencial recuperado reproduce el downwash."""
    n, nt = 16, 16
    dt = 4.0 / nt

    def psi(t, x):
        return np.sin(np.pi * t / 4.0) ** 2 * (1.0 - x**2) ** 2 * np.cos(x)

    series = IntervalSeries.from_function(psi, nt, dt, n)
    downwash = potential_to_downwash(series, 0.5, 1.0)
    recovered = downwash_to_potential(downwash, 0.5, 1.0, n_jobs=1)
    again = potential_to_downwash(recovered, 0.5, 1.0)
    scale = np.abs(downwash.values).max()
    assert np.abs(again.values - downwash.values).max() < 1e-4 * scale


def test_downwash_inversion_requires_subsonic():
    """Test de inversion con U supersonico."""
    series = IntervalSeries(0.1, np.zeros((8, 8)))
    with pytest.raises(DomainError):
        downwash_to_potential(series, 1.5, 1.0)


def test_downwash_inversion_recovers_potential():
    """Test de recuperacion del potencial fabricado desde su downwash."""
    n, nt = 32, 32
    series = IntervalSeries.from_function(manufactured_potential, nt, 4.0 / nt, n)
    downwash = potential_to_downwash(series, 0.5, 1.0)
    recovered = downwash_to_potential(downwash, 0.5, 1.0, n_jobs=1)
    error = np.abs(recovered.values - series.values).max() / np.abs(series.values).max()
    assert error <= 1e-3


def test_duality_pairing_bounded_across_resolutions():
    """Test de <u_x, psi> acotado y estable al refinar los nodos."""
    table = duality_table(0.5, 1.0, node_counts=(16, 32, 64), steps=16, n_jobs=1)
    pairing = table["pairing"].to_numpy()
    assert np.all(np.isfinite(pairing))
    assert np.abs(pairing).min() > 0
    assert np.abs(pairing).max() / np.abs(pairing).min() <= 1.05
    np.testing.assert_allclose(pairing, table["exact_pairing"].to_numpy(), rtol=1e-3)


def test_with_homogeneous_shifts_coefficient_only():
    """Test de suma del modo homogeneo: cambia el coeficiente, no la imagen de Hilbert."""
    w = finite_hilbert_invert(IntervalFunction.sample(np.cos, 32))
    shifted = w.with_homogeneous(2.5)
    assert homogeneous_coefficient(shifted) == pytest.approx(homogeneous_coefficient(w) + 2.5)
    np.testing.assert_allclose(
        finite_hilbert(shifted).values, finite_hilbert(w).values, atol=1e-10
    )
