"""
Tests de la linea de comandos.
"""

import json

import pytest

from app.cli import build_parser, main
from app.config import get_settings


@pytest.fixture(autouse=True)
def restore_settings():
    """Las opciones globales modifican la configuracion cacheada."""
    settings = get_settings()
    saved = (settings.threads, settings.seed, settings.log_level)
    yield
    settings.threads, settings.seed, settings.log_level = saved


def _write(tmp_path, text: str):
    path = tmp_path / "scenario.toml"
    path.write_text(text)
    return path


SMALL = """
name = "cli"
[grid]
nx = 9
ny = 9
[model]
U = 2.0
k = 0.1
[time]
dt = 0.002
T = 0.02
"""


def test_parser_requires_command():
    """Test de invocacion sin subcomando."""
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_simulate_ok(tmp_path):
    """Test de simulate con salida correcta."""
    out = tmp_path / "out"
    code = main(["simulate", "--config", str(_write(tmp_path, SMALL)), "--out", str(out)])
    assert code == 0
    assert (out / "trajectory.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["name"] == "cli"


def test_simulate_failed_expectation(tmp_path):
    """Test de codigo 1 con una verificacion fallida."""
    text = SMALL + "[expect]\nfinal_ut_norm_max = 1e-30\n"
    code = main(["simulate", "--config", str(_write(tmp_path, text)), "--out", str(tmp_path)])
    assert code == 1


def test_missing_speed_exit_code(tmp_path):
    """Test de codigo 2 con configuracion sin U."""
    text = SMALL.replace("U = 2.0\n", "")
    code = main(["simulate", "--config", str(_write(tmp_path, text)), "--out", str(tmp_path)])
    assert code == 2


def test_invalid_threads(tmp_path):
    """Test de --threads invalido."""
    code = main(["simulate", "--config", str(_write(tmp_path, SMALL)), "--threads", "0"])
    assert code == 2


def test_overrides_applied(tmp_path):
    """Test de --seed y --threads sobre la configuracion."""
    main(
        [
            "simulate",
            "--config",
            str(_write(tmp_path, SMALL)),
            "--out",
            str(tmp_path),
            "--seed",
            "11",
            "--threads",
            "2",
        ]
    )
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["settings"]["seed"] == 11
    assert manifest["settings"]["threads"] == 2


def test_selftest_subset(tmp_path):
    """Test de selftest con --only."""
    code = main(["selftest", "--only", "kjc_symbols", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "manifest.json").exists()


def test_equilibria_requires_existing_config(tmp_path):
    """Test de escenario inexistente."""
    code = main(["equilibria", "--config", str(tmp_path / "missing.toml")])
    assert code == 2
