"""
Tests para la API del laboratorio.
"""

import pytest
from httpx import ASGITransport, AsyncClient

from app.main import app

SMALL_SCENARIO = {
    "name": "api",
    "grid": {"nx": 9, "ny": 9},
    "model": {"U": 2.0, "k": 0.1},
    "initial": {"shape": "mode", "amplitude": 0.05},
    "time": {"dt": 0.002, "T": 0.02},
}


@pytest.fixture
async def client():
    """Cliente HTTP asincrono para tests."""
    async with AsyncClient(
        transport=ASGITransport(app=app),
        base_url="http://test",
    ) as ac:
        yield ac


@pytest.mark.asyncio
async def test_root(client: AsyncClient):
    """Test de la ruta raiz."""
    response = await client.get("/")
    assert response.status_code == 200
    data = response.json()
    assert "name" in data
    assert "version" in data


@pytest.mark.asyncio
async def test_health(client: AsyncClient):
    """Test del endpoint de salud."""
    response = await client.get("/api/v1/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


@pytest.mark.asyncio
async def test_simulate(client: AsyncClient):
    """Test de simulacion pequena."""
    response = await client.post("/api/v1/simulate", json=SMALL_SCENARIO)
    assert response.status_code == 200
    data = response.json()
    assert data["name"] == "api"
    assert data["steps"] == 10
    assert data["final_time"] == pytest.approx(0.02)
    assert data["samples"][0]["t"] == 0.0
    assert data["checks"][0]["name"] == "energy_balance"


@pytest.mark.asyncio
async def test_simulate_missing_speed(client: AsyncClient):
    """Test de escenario sin U."""
    body = {**SMALL_SCENARIO, "model": {"k": 0.1}}
    response = await client.post("/api/v1/simulate", json=body)
    assert response.status_code == 422


@pytest.mark.asyncio
async def test_simulate_grid_too_large(client: AsyncClient):
    """Test de malla por encima del limite de la API."""
    body = {**SMALL_SCENARIO, "grid": {"nx": 65, "ny": 65}}
    response = await client.post("/api/v1/simulate", json=body)
    assert response.status_code == 422
    assert "CLI" in response.json()["detail"]


@pytest.mark.asyncio
async def test_simulate_delayed_step_too_large(client: AsyncClient):
    """Test de dt demasiado grande para el cierre con retardo."""
    body = {
        **SMALL_SCENARIO,
        "model": {"U": 2.0, "closure": "delayed"},
        "time": {"dt": 0.5, "T": 1.0},
    }
    response = await client.post("/api/v1/simulate", json=body)
    assert response.status_code == 422
    assert response.json()["detail"].startswith("ConfigError")


@pytest.mark.asyncio
async def test_equilibria(client: AsyncClient):
    """Test de continuacion en la presion."""
    body = {
        **SMALL_SCENARIO,
        "model": {"U": 0.0, "closure": "in_vacuo"},
        "p0": {"shape": "uniform", "amplitude": 1.0},
        "sweep": {"parameter": "pressure", "start": 1.0, "stop": 3.0, "count": 3},
    }
    response = await client.post("/api/v1/equilibria", json=body)
    assert response.status_code == 200
    data = response.json()
    assert data["parameter"] == "pressure"
    assert len(data["points"]) == 3
    assert data["failures"] == 0


@pytest.mark.asyncio
async def test_kjc_probe(client: AsyncClient):
    """Test del sondeo KJC reducido."""
    body = {
        "n_points": 20,
        "node_counts": [16, 32],
        "n_functions": 2,
        "downwash_nodes": 16,
        "downwash_steps": 16,
        "duality_nodes": [16, 32],
    }
    response = await client.post("/api/v1/kjc/probe", json=body)
    assert response.status_code == 200
    data = response.json()
    assert data["homogeneity_max_defect"] <= 1e-15
    assert set(data["r_limits"]) == {"plus_infinity", "minus_infinity", "zero"}
    assert [row["nodes"] for row in data["hilbert_round_trip"]] == [16, 32]


@pytest.mark.asyncio
async def test_kjc_probe_transonic(client: AsyncClient):
    """Test de sondeo con U = 1."""
    response = await client.post("/api/v1/kjc/probe", json={"U": 1.0})
    assert response.status_code == 422


@pytest.mark.asyncio
async def test_compare_closures(client: AsyncClient):
    """Test de comparacion de cierres."""
    body = {
        **SMALL_SCENARIO,
        "time": {"T": 0.03, "stride": 4},
        "compare": {"U_values": [2.0, 4.0]},
    }
    response = await client.post("/api/v1/compare-closures", json=body)
    assert response.status_code == 200
    data = response.json()
    assert [row["U"] for row in data["rows"]] == [2.0, 4.0]
    assert isinstance(data["monotone"], bool)


@pytest.mark.asyncio
async def test_delay_horizon(client: AsyncClient):
    """Test del horizonte de retardo."""
    response = await client.get("/api/v1/delay-horizon", params={"U": 2.0})
    assert response.status_code == 200
    data = response.json()
    assert data["t_star"] > 0
    assert data["nx"] == 17


@pytest.mark.asyncio
async def test_delay_horizon_transonic(client: AsyncClient):
    """Test del horizonte con U = 1."""
    response = await client.get("/api/v1/delay-horizon", params={"U": 1.0})
    assert response.status_code == 422
