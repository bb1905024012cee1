"""
Tests del servicio de escenarios: configuracion, corridas y salidas.
"""

import json

import numpy as np
import polars as pl
import pytest

from app.config import get_settings
from app.errors import ConfigError
from app.models.schemas import KjcSpec
from app.services.history import HistoryBuffer
from app.services.output import TRAJECTORY_COLUMNS, read_snapshots
from app.services.plate import PlateState
from app.services.scenarios import scenario_service


def small_scenario(**sections) -> dict:
    """Escenario minimo en malla 9x9 con pocos pasos."""
    data = {
        "name": "small",
        "grid": {"nx": 9, "ny": 9},
        "model": {"U": 2.0, "k": 0.1},
        "initial": {"shape": "mode", "amplitude": 0.05},
        "time": {"dt": 0.002, "T": 0.04, "stride": 5},
    }
    data.update(sections)
    return data


def test_missing_speed_names_field():
    """Test de configuracion sin U: el error nombra model.U."""
    with pytest.raises(ConfigError, match=r"model\.U"):
        scenario_service.parse_config({"name": "x", "model": {"k": 1.0}})


def test_unknown_key_rejected():
    """Test de clave desconocida en una seccion."""
    with pytest.raises(ConfigError, match=r"grid\.nz"):
        scenario_service.parse_config(small_scenario(grid={"nx": 9, "nz": 9}))


@pytest.mark.parametrize(
    "model",
    [
        {"U": 1.0},
        {"U": 0.8, "closure": "piston_lowfreq"},
        {"U": -1.0},
    ],
)
def test_invalid_model(model: dict):
    """Test de parametros de flujo invalidos."""
    with pytest.raises(ConfigError, match="model"):
        scenario_service.parse_config(small_scenario(model=model))


def test_load_config_from_toml(tmp_path):
    """Test de lectura de un escenario TOML."""
    path = tmp_path / "scenario.toml"
    path.write_text('name = "toml"\n[model]\nU = 0.5\n[grid]\nnx = 7\nny = 7\n')
    config = scenario_service.load_config(path)
    assert config.name == "toml"
    assert config.grid.nx == 7
    assert config.model.closure == "piston_classical"


def test_load_config_invalid_toml(tmp_path):
    """Test de TOML mal formado."""
    path = tmp_path / "broken.toml"
    path.write_text("[model\nU = 0.5\n")
    with pytest.raises(ConfigError):
        scenario_service.load_config(path)


def test_load_config_missing_file(tmp_path):
    """Test de archivo inexistente."""
    with pytest.raises(ConfigError):
        scenario_service.load_config(tmp_path / "missing.toml")


def test_shipped_scenarios_parse():
    """Test de que todos los escenarios incluidos son validos."""
    paths = sorted(get_settings().scenarios_path.glob("*.toml"))
    assert paths
    for path in paths:
        config = scenario_service.load_config(path)
        assert config.name == path.stem


@pytest.mark.parametrize("shape", ["zero", "mode", "bump", "random"])
def test_initial_shapes(shape: str):
    """Test de los datos iniciales con nombre."""
    config = scenario_service.parse_config(
        small_scenario(initial={"shape": shape, "amplitude": 0.5, "velocity": 0.1, "seed": 2})
    )
    grid = scenario_service.build_grid(config)
    state = scenario_service.initial_state(config, grid)
    assert state.t == 0.0
    assert state.u.values[0, :].max() == 0.0
    if shape == "zero":
        assert not state.u.values.any()
    else:
        assert np.abs(state.u.values).max() == pytest.approx(0.5)


def test_initial_from_file(tmp_path):
    """Test de dato inicial leido de un .npz."""
    config = scenario_service.parse_config(small_scenario())
    grid = scenario_service.build_grid(config)
    u = np.ones(grid.shape)
    path = tmp_path / "initial.npz"
    np.savez(path, u=u, v=np.zeros(grid.shape))
    config = scenario_service.parse_config(
        small_scenario(initial={"shape": "file", "path": str(path)})
    )
    state = scenario_service.initial_state(config, grid)
    # Los nodos de frontera se anulan
    assert state.u.values[0, 0] == 0.0
    assert state.u.values[4, 4] == 1.0


def test_run_simulate_outputs(tmp_path):
    """Test de corrida con CSV de trayectoria, instantaneas y manifiesto."""
    config = scenario_service.parse_config(small_scenario(output={"snapshots": True}))
    manifest = scenario_service.run_simulate(config, tmp_path)

    trajectory = pl.read_csv(tmp_path / "trajectory.csv")
    assert trajectory.columns == TRAJECTORY_COLUMNS
    assert trajectory.height == 21

    header, data = read_snapshots(tmp_path)
    assert data.shape == (5, 2, 9, 9)
    assert header["fields"] == ["u", "u_t"]

    written = json.loads((tmp_path / "manifest.json").read_text())
    assert written["command"] == "simulate"
    assert written["config"]["model"]["U"] == 2.0
    assert "trajectory.csv" in manifest.outputs
    assert manifest.passed
    assert manifest.checks[0].name == "energy_balance"


def test_failed_expectation(tmp_path):
    """Test de verificacion [expect] fallida."""
    config = scenario_service.parse_config(
        small_scenario(expect={"final_ut_norm_max": 1e-30})
    )
    manifest = scenario_service.run_simulate(config, tmp_path)
    assert not manifest.passed
    assert any(c.name == "final_velocity" and c.status == "fail" for c in manifest.checks)


def test_prehistory_from_file(tmp_path):
    """Test de corrida que arranca del final de una prehistoria guardada."""
    config = scenario_service.parse_config(small_scenario())
    grid = scenario_service.build_grid(config)
    initial = scenario_service.initial_state(config, grid)
    history = HistoryBuffer(grid, 0.002)
    for k in range(3):
        history.append(PlateState(initial.u, initial.v, -0.004 + 0.002 * k))
    path = tmp_path / "prehistory.npz"
    history.to_npz(path)

    config = scenario_service.parse_config(
        small_scenario(prehistory={"kind": "file", "path": str(path)})
    )
    trajectory = scenario_service.simulate(config)
    assert trajectory.records[0].t == pytest.approx(0.0)
    assert trajectory.final.t == pytest.approx(0.04)


def test_equilibria_pressure_sweep(tmp_path):
    """Test de continuacion en la presion con salida CSV."""
    config = scenario_service.parse_config(
        small_scenario(
            model={"U": 0.0, "closure": "in_vacuo"},
            p0={"shape": "uniform", "amplitude": 1.0},
            sweep={"parameter": "pressure", "start": 10.0, "stop": 50.0, "count": 3},
        )
    )
    manifest = scenario_service.run_equilibria(config, tmp_path)
    branch = pl.read_csv(tmp_path / "branch.csv")
    assert branch.height == 3
    assert branch["h2_norm"].is_sorted()
    assert manifest.passed


def test_relative_sweep_needs_small_grid():
    """Test de barrido relativo a la carga critica en malla sin espectro denso."""
    settings = get_settings()
    limit = settings.stability_max_nodes
    settings.stability_max_nodes = 10
    try:
        config = scenario_service.parse_config(
            small_scenario(
                model={"U": 0.0, "closure": "in_vacuo"},
                sweep={"parameter": "load", "relative_to_critical": True},
            )
        )
        with pytest.raises(ConfigError):
            scenario_service.equilibria(config)
    finally:
        settings.stability_max_nodes = limit


def test_kjc_probe_tables(tmp_path):
    """Test del sondeo KJC reducido."""
    spec = KjcSpec(
        n_points=50,
        node_counts=[16, 32],
        n_functions=2,
        downwash_nodes=16,
        downwash_steps=16,
        duality_nodes=[16, 32],
    )
    tables = scenario_service.kjc_probe(spec, seed=0)
    assert set(tables) == {
        "r_strip",
        "homogeneity",
        "r_limits",
        "hilbert_round_trip",
        "downwash_round_trip",
        "duality",
    }
    assert tables["r_limits"].height == 3
    assert tables["duality"]["nodes"].to_list() == [16, 32]
    checks = {c.name: c for c in scenario_service.kjc_checks(tables)}
    assert checks["kjc_homogeneity"].status == "pass"
    assert checks["kjc_r_limits"].status == "pass"
    assert checks["downwash_round_trip"].threshold == 1e-3
    assert checks["downwash_round_trip"].status == "pass"
    assert checks["kjc_duality"].status == "pass"


def test_compare_closures_requires_section():
    """Test de compare-closures sin seccion [compare]."""
    config = scenario_service.parse_config(small_scenario())
    with pytest.raises(ConfigError):
        scenario_service.compare_closures(config)


def test_compare_closures_table():
    """Test de la tabla de distancias entre cierres."""
    config = scenario_service.parse_config(
        small_scenario(time={"T": 0.05, "stride": 5}, compare={"U_values": [4.0, 2.0]})
    )
    frame = scenario_service.compare_closures(config, n_jobs=2)
    assert frame.sort("U")["U"].to_list() == [2.0, 4.0]
    assert (frame["sup_distance"] >= frame["terminal_distance"]).all()
    horizons = frame.sort("U")["t_star"].to_numpy()
    assert horizons[0] >= horizons[1]


def test_compare_closures_identity_row(tmp_path):
    """Test de la fila del piston clasico contra si mismo: distancia nula."""
    config = scenario_service.parse_config(
        small_scenario(
            time={"T": 0.05, "stride": 5},
            compare={"U_values": [2.0, 4.0], "identity_check": True},
        )
    )
    frame = scenario_service.compare_closures(config, n_jobs=2)
    assert frame.height == 3
    identity = frame.filter(frame["baseline"] == frame["target"])
    assert identity["U"].to_list() == [2.0]
    assert identity["sup_distance"][0] == 0.0
    assert scenario_service.sweep_rows(frame)["U"].to_list() == [2.0, 4.0]
    assert (scenario_service.sweep_rows(frame)["sup_distance"] > 0).all()

    manifest = scenario_service.run_compare_closures(config, tmp_path / "compare")
    checks = {c.name: c for c in manifest.checks}
    assert checks["closure_identity"].status == "pass"
