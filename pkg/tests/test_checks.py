"""
Tests de la autoverificacion.
"""

import json

import pytest

from app.errors import ConfigError
from app.services.checks import (
    CHECKS,
    check_delay_fidelity,
    check_dissipation_finiteness,
    check_hilbert_round_trip,
    check_kjc_symbols,
    check_negative_damping,
    check_regularity_bounds,
    run_selftest,
    selftest,
)


def test_unknown_check():
    """Test de verificacion desconocida."""
    with pytest.raises(ConfigError):
        selftest(["no_existe"])


def test_selftest_manifest(tmp_path):
    """Test del manifiesto de un subconjunto de verificaciones."""
    manifest = run_selftest(tmp_path, ["kjc_symbols", "delay_horizon"])
    assert [c.name for c in manifest.checks] == ["kjc_symbols", "delay_horizon"]
    assert manifest.passed
    written = json.loads((tmp_path / "manifest.json").read_text())
    assert written["command"] == "selftest"
    assert written["config"]["checks"] == ["kjc_symbols", "delay_horizon"]


def test_all_checks_registered():
    """Test de que todas las verificaciones de aceptacion estan registradas."""
    assert len(CHECKS) == 13


def test_kjc_symbols():
    """Test de simbolos KJC."""
    assert check_kjc_symbols().status == "pass"


def test_hilbert_round_trip():
    """Test de ida y vuelta de Hilbert a 256 nodos."""
    assert check_hilbert_round_trip().status == "pass"


@pytest.mark.slow
def test_delay_fidelity():
    """Test de convergencia de la cuadratura del retardo."""
    outcome = check_delay_fidelity()
    assert outcome.status == "pass", outcome.detail
    assert outcome.threshold == 1.9
    assert "ordenes=" in outcome.detail


@pytest.mark.slow
def test_negative_damping():
    """Test de crecimiento con U = 1.2 y decaimiento con U = 2 (baja frecuencia)."""
    outcome = check_negative_damping()
    assert outcome.status == "pass", outcome.detail


@pytest.mark.slow
def test_dissipation_finiteness():
    """Test de disipacion finita en flujo subsonico amortiguado."""
    outcome = check_dissipation_finiteness()
    assert outcome.status == "pass", outcome.detail


def test_regularity_bounds():
    """Test de cocientes de regularidad acotados al refinar malla y al subir U."""
    outcome = check_regularity_bounds()
    assert outcome.status == "pass", outcome.detail
    assert outcome.value <= 2.0


@pytest.mark.slow
def test_dissipation_finiteness_33():
    """Test de disipacion finita en la malla 33x33 de aceptacion."""
    outcome = check_dissipation_finiteness(size=33)
    assert outcome.status == "pass", outcome.detail
    assert outcome.value < 1e-8


@pytest.mark.slow
def test_negative_damping_17():
    """Test de crecimiento y decaimiento de baja frecuencia en malla 17x17."""
    outcome = check_negative_damping(size=17)
    assert outcome.status == "pass", outcome.detail
