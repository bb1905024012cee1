"""
Autoverificacion del laboratorio.

Cada verificacion corre en mallas pequenas, compara contra un oraculo independiente
(estenciles en bucles, matrices densas, marchas geometricas) y devuelve un
CheckOutcome con el nombre con el que aparece en los manifiestos.
"""

import logging
import math
import time
from pathlib import Path
from typing import Callable

import numpy as np

from app.config import get_settings
from app.errors import ConfigError
from app.models.schemas import (
    CheckOutcome,
    CompareSpec,
    ModelSpec,
    RunManifest,
    ScenarioConfig,
)
from app.services import kjc, output
from app.services.aero import (
    DelayQuadrature,
    ModelParams,
    decay_bound_ratio,
    delay_horizon,
    delayed_potential,
)
from app.services.energy import cumulative_balance, window_contributions
from app.services.history import HistoryBuffer
from app.services.integrator import default_dt, run
from app.services.plate import (
    Grid,
    PlateField,
    PlateState,
    airy_solve,
    bending_eigenpairs,
    biharmonic_apply,
    h2_norm,
    inertia_solve,
    inner,
    sharp_regularity_ratio,
    vk_bracket,
    vk_force,
    vk_potential,
)
from app.services.scenarios import package_version, scenario_service
from app.services.stationary import continuation, critical_load, load_shape, newton_solve

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Oraculos
# ---------------------------------------------------------------------------


def _reflect(index: int, n: int) -> int:
    if index < 0:
        return -index
    if index > n - 1:
        return 2 * (n - 1) - index
    return index


def bracket_oracle(u: np.ndarray, w: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """[u, w] nodo a nodo con fantasmas reflejados."""
    nx, ny = u.shape

    def at(f: np.ndarray, i: int, j: int) -> float:
        return f[_reflect(i, nx), _reflect(j, ny)]

    def second(f: np.ndarray, i: int, j: int) -> tuple[float, float, float]:
        fxx = (at(f, i + 1, j) - 2 * at(f, i, j) + at(f, i - 1, j)) / hx**2
        fyy = (at(f, i, j + 1) - 2 * at(f, i, j) + at(f, i, j - 1)) / hy**2
        fxy = (
            at(f, i + 1, j + 1) - at(f, i + 1, j - 1) - at(f, i - 1, j + 1) + at(f, i - 1, j - 1)
        ) / (4 * hx * hy)
        return fxx, fxy, fyy

    out = np.zeros((nx, ny))
    for i in range(nx):
        for j in range(ny):
            uxx, uxy, uyy = second(u, i, j)
            wxx, wxy, wyy = second(w, i, j)
            out[i, j] = uxx * wyy + uyy * wxx - 2 * uxy * wxy
    return out


def dense_laplacian(grid: Grid) -> np.ndarray:
    """Laplaciano en todos los nodos a partir del interior, con fantasmas reflejados."""
    nx, ny = grid.shape
    interior = {(i, j): k for k, (i, j) in enumerate(
        (i, j) for i in range(1, nx - 1) for j in range(1, ny - 1)
    )}
    L = np.zeros((nx * ny, grid.n_interior))
    for i in range(nx):
        for j in range(ny):
            row = i * ny + j
            stencil = [
                ((i + 1, j), 1 / grid.hx**2),
                ((i - 1, j), 1 / grid.hx**2),
                ((i, j + 1), 1 / grid.hy**2),
                ((i, j - 1), 1 / grid.hy**2),
                ((i, j), -2 / grid.hx**2 - 2 / grid.hy**2),
            ]
            for (a, b), coef in stencil:
                key = (_reflect(a, nx), _reflect(b, ny))
                if key in interior:
                    L[row, interior[key]] += coef
    return L


def dense_bending(grid: Grid) -> np.ndarray:
    L = dense_laplacian(grid)
    return L.T @ np.diag(grid.weights.ravel()) @ L


def dense_dirichlet_laplacian(grid: Grid) -> np.ndarray:
    nx, ny = grid.shape
    mx, my = nx - 2, ny - 2
    A = np.zeros((mx * my, mx * my))
    for i in range(mx):
        for j in range(my):
            row = i * my + j
            A[row, row] = -2 / grid.hx**2 - 2 / grid.hy**2
            for a, b, coef in (
                (i + 1, j, 1 / grid.hx**2),
                (i - 1, j, 1 / grid.hx**2),
                (i, j + 1, 1 / grid.hy**2),
                (i, j - 1, 1 / grid.hy**2),
            ):
                if 0 <= a < mx and 0 <= b < my:
                    A[row, a * my + b] += coef
    return A


def exit_time_oracle(grid: Grid, U: float, n_theta: int = 360, ds: float = 1e-3) -> float:
    """t* por marcha explicita de x - s (U + sin theta, cos theta) hasta salir del rectangulo."""
    X, Y = grid.mesh()
    X, Y = X.ravel(), Y.ravel()
    s = np.arange(0.0, 50.0, ds)
    best = 0.0
    for theta in 2 * np.pi * np.arange(n_theta) / n_theta:
        px = X[:, None] - (U + math.sin(theta)) * s[None, :]
        py = Y[:, None] - math.cos(theta) * s[None, :]
        outside = (px < 0) | (px > grid.lx) | (py < 0) | (py > grid.ly)
        first = np.where(outside.any(axis=1), outside.argmax(axis=1), len(s) - 1)
        best = max(best, float(s[first].max()))
    return best


def _random_clamped(grid: Grid, rng: np.random.Generator, scale: float = 1.0) -> PlateField:
    return PlateField.from_interior(grid, scale * rng.standard_normal(grid.n_interior))


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    denominator = max(float(np.abs(b).max()), 1e-300)
    return float(np.abs(a - b).max()) / denominator


# ---------------------------------------------------------------------------
# Verificaciones
# ---------------------------------------------------------------------------


def check_oracle_equivalence(seed: int = 0) -> CheckOutcome:
    grid = Grid(9, 11, 1.0, 1.2)
    rng = np.random.default_rng(seed)
    u, w = _random_clamped(grid, rng), _random_clamped(grid, rng)

    errors = {
        "vk_bracket": _relative(
            vk_bracket(u, w).values, bracket_oracle(u.values, w.values, grid.hx, grid.hy)
        )
    }
    B = dense_bending(grid)
    errors["biharmonic_apply"] = _relative(biharmonic_apply(u).interior, B @ u.interior)
    rhs = bracket_oracle(u.values, w.values, grid.hx, grid.hy)[1:-1, 1:-1].ravel()
    errors["airy_solve"] = _relative(airy_solve(u, w).interior, -np.linalg.solve(B, rhs))
    alpha = 0.3
    A = np.eye(grid.n_interior) - alpha * dense_dirichlet_laplacian(grid)
    errors["inertia_solve"] = _relative(
        inertia_solve(u, alpha).interior, np.linalg.solve(A, u.interior)
    )

    worst = max(errors, key=errors.get)
    return CheckOutcome(
        name="oracle_equivalence",
        status="pass" if errors[worst] <= 1e-10 else "fail",
        value=errors[worst],
        threshold=1e-10,
        detail=f"peor operacion: {worst}",
    )


def check_gradient(seed: int = 0, pairs: int = 20, eps: float = 1e-6) -> CheckOutcome:
    grid = Grid(9, 9)
    rng = np.random.default_rng(seed)
    F0 = load_shape(grid, "biaxial", 20.0)
    worst = 0.0
    for _ in range(pairs):
        u = _random_clamped(grid, rng, 0.1)
        h = _random_clamped(grid, rng, 0.1)
        exact = inner(vk_force(u, F0), h)
        finite = (vk_potential(u + h * eps, F0) - vk_potential(u - h * eps, F0)) / (2 * eps)
        worst = max(worst, abs(exact - finite) / max(abs(exact), 1e-300))
    return CheckOutcome(
        name="gradient_check",
        status="pass" if worst < 1e-5 else "fail",
        value=worst,
        threshold=1e-5,
    )


def _balance_order(params: ModelParams, amplitude: float, T: float) -> float:
    grid = params.grid
    _, (mode,) = bending_eigenpairs(grid, 1)
    initial = PlateState(mode * amplitude, PlateField.zeros(grid), 0.0)
    sums = []
    for dt in (0.004, 0.002, 0.001):
        trajectory = run(initial, "flat", params, dt, T, stride=10**6)
        sums.append(cumulative_balance(trajectory.records))
    return math.log2(sums[-2] / sums[-1])


def check_energy_balance() -> CheckOutcome:
    grid = Grid(9, 9)
    cases = {
        "conservative": ModelParams.unloaded(grid, closure="in_vacuo"),
        "damped": ModelParams.unloaded(grid, closure="in_vacuo", k=0.5),
        "piston-forced": ModelParams(
            U=2.0,
            p0=load_shape(grid, "uniform", 1.0),
            F0=PlateField.zeros(grid, "free"),
            closure="piston_classical",
        ),
    }
    orders = {name: _balance_order(params, 0.5, 0.5) for name, params in cases.items()}
    worst = min(orders, key=orders.get)
    return CheckOutcome(
        name="energy_balance",
        status="pass" if orders[worst] >= 1.9 else "fail",
        value=orders[worst],
        threshold=1.9,
        detail=", ".join(f"{k}={v:.2f}" for k, v in orders.items()),
    )


def check_dissipation_finiteness(size: int = 7) -> CheckOutcome:
    grid = Grid(size, size)
    params = ModelParams.unloaded(grid, U=0.8, k=1.0, closure="piston_classical")
    _, (mode,) = bending_eigenpairs(grid, 1)
    initial = PlateState(mode * 0.01, PlateField.zeros(grid), 0.0)
    trajectory = run(initial, "flat", params, default_dt(grid), 200.0, stride=10**6)

    last_window = float(window_contributions(trajectory, 10.0)[-1])
    final_velocity = trajectory.records[-1].ut_norm
    final = trajectory.final.u
    distance = h2_norm(final - newton_solve(final, params))
    passed = last_window < 1e-8 and final_velocity < 1e-6 and distance < 1e-4
    return CheckOutcome(
        name="dissipation_finiteness",
        status="pass" if passed else "fail",
        value=last_window,
        threshold=1e-8,
        detail=f"|u_t(T)|={final_velocity:.3e}, distancia al equilibrio={distance:.3e}",
    )


def check_negative_damping(size: int = 7) -> CheckOutcome:
    grid = Grid(size, size)
    _, (mode,) = bending_eigenpairs(grid, 1)
    initial = PlateState(mode * 1e-6, PlateField.zeros(grid), 0.0)
    factors = {}
    for U in (1.2, 2.0):
        params = ModelParams.unloaded(grid, U=U, closure="piston_lowfreq")
        trajectory = run(initial, "flat", params, default_dt(grid), 50.0, stride=10**6)
        ut = trajectory.column("ut_norm")
        reference = ut[int(np.searchsorted(trajectory.times, 1.0))]
        factors[U] = float(ut.max() / reference) if U < 1.5 else float(reference / ut[-1])
    passed = factors[1.2] >= 10.0 and factors[2.0] >= 10.0
    return CheckOutcome(
        name="negative_damping",
        status="pass" if passed else "fail",
        value=min(factors.values()),
        threshold=10.0,
        detail=f"crecimiento U=1.2: {factors[1.2]:.3e}, decaimiento U=2: {factors[2.0]:.3e}",
    )


def smooth_history(grid: Grid, t_star: float, steps: int, scale: float = 1.0) -> HistoryBuffer:
    """Historial analitico u = b(x, y) (1 + sin t / 2) con b = sin^6 compacto en [1/4, 3/4]^2."""

    def bump(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        sx = np.where(np.abs(X / grid.lx - 0.5) < 0.25, np.sin(2 * np.pi * (X / grid.lx - 0.25)), 0)
        sy = np.where(np.abs(Y / grid.ly - 0.5) < 0.25, np.sin(2 * np.pi * (Y / grid.ly - 0.25)), 0)
        return (sx * sy) ** 6

    base = PlateField.from_function(grid, bump)
    dt = t_star / steps
    history = HistoryBuffer(grid, dt, t_star)
    for k in range(-steps - 2, 1):
        t = k * dt
        factor = scale * (1.0 + 0.5 * math.sin(t))
        history.append(PlateState(base * factor, base * (0.5 * scale * math.cos(t)), t))
    return history


def check_delay_fidelity() -> CheckOutcome:
    grid = Grid(17, 17)
    U = 2.0
    t_star = delay_horizon(grid, U)
    params = ModelParams.unloaded(grid, U=U, closure="delayed")
    history = smooth_history(grid, t_star, 1024)

    # los nodos en s coinciden con instantaneas del historial en todos los niveles
    levels = [DelayQuadrature(32, 16, t_star)]
    for _ in range(4):
        levels.append(levels[-1].refined())
    values = [delayed_potential(history, 0.0, params, quad).values for quad in levels]
    diffs = np.array([np.abs(a - b).max() for a, b in zip(values[:-1], values[1:])])
    orders = np.log2(diffs[:-1] / diffs[1:])
    order = float(orders[-1])

    zero = HistoryBuffer.flat(PlateState.zeros(grid), t_star / 64, t_star)
    zero_value = float(np.abs(delayed_potential(zero, 0.0, params, levels[0]).values).max())

    doubled = smooth_history(grid, t_star, 1024, scale=2.0)
    q1 = delayed_potential(history, 0.0, params, levels[0]).values
    q2 = delayed_potential(doubled, 0.0, params, levels[0]).values
    linearity = _relative(q2, 2.0 * q1)

    passed = order >= 1.9 and zero_value == 0.0 and linearity <= 1e-13
    return CheckOutcome(
        name="delay_fidelity",
        status="pass" if passed else "fail",
        value=order,
        threshold=1.9,
        detail=(
            "ordenes=" + ", ".join(f"{o:.2f}" for o in orders)
            + f", historial nulo={zero_value:.1e}, linealidad={linearity:.1e}"
        ),
    )


def check_delay_horizon() -> CheckOutcome:
    grid = Grid(9, 9)
    speeds = (1.5, 2.0, 4.0)
    horizons = [delay_horizon(grid, U) for U in speeds]
    errors = [
        abs(t - exit_time_oracle(grid, U)) / exit_time_oracle(grid, U)
        for U, t in zip(speeds, horizons)
    ]
    monotone = all(a >= b for a, b in zip(horizons, horizons[1:]))
    return CheckOutcome(
        name="delay_horizon",
        status="pass" if max(errors) <= 0.02 and monotone else "fail",
        value=max(errors),
        threshold=0.02,
        detail="t* = " + ", ".join(f"{t:.4f}" for t in horizons),
    )


def smooth_clamped(grid: Grid) -> PlateField:
    """sin^2(pi x / lx) sin^2(pi y / ly): suave y con u = d_nu u = 0 en el borde."""
    return PlateField.from_function(
        grid,
        lambda X, Y: (np.sin(np.pi * X / grid.lx) * np.sin(np.pi * Y / grid.ly)) ** 2,
    )


def decay_ratio(grid: Grid, U: float, c: float = 1.0) -> float:
    """Cociente de la cota de decaimiento para el historial suave en t = 0."""
    t_star = delay_horizon(grid, U)
    params = ModelParams.unloaded(grid, U=U, closure="delayed")
    history = smooth_history(grid, t_star, 256)
    return decay_bound_ratio(history, 0.0, params, DelayQuadrature(32, 32, t_star), c)


def check_regularity_bounds(seed: int = 0) -> CheckOutcome:
    sizes = (9, 17, 33)
    sharp = [sharp_regularity_ratio(smooth_clamped(Grid(n, n))) for n in sizes]
    rng = np.random.default_rng(seed)
    family = max(sharp_regularity_ratio(_random_clamped(Grid(9, 9), rng)) for _ in range(20))

    speeds = (2.0, 4.0, 8.0)
    by_speed = [decay_ratio(Grid(17, 17), U) for U in speeds]
    by_grid = [decay_ratio(Grid(n, n), 4.0) for n in (17, 33)]

    spreads = [max(r) / min(r) for r in (sharp, by_grid)]
    # con U creciente el cociente no debe crecer mas alla del valor en velocidades bajas
    growth = by_speed[-1] / max(by_speed[:-1])
    spread = max(spreads + [growth])
    return CheckOutcome(
        name="regularity_bounds",
        status="pass" if spread <= 2.0 else "fail",
        value=spread,
        threshold=2.0,
        detail=(
            "W2inf/H2^2 por malla=" + ", ".join(f"{r:.3e}" for r in sharp)
            + f", familia aleatoria 9x9={family:.3e}"
            + ", decaimiento por U=" + ", ".join(f"{r:.3e}" for r in by_speed)
            + ", decaimiento por malla (U=4)=" + ", ".join(f"{r:.3e}" for r in by_grid)
        ),
    )


def check_buckling_onset() -> CheckOutcome:
    grid = Grid(25, 25)
    critical, _ = critical_load(grid, "uniaxial")
    params = ModelParams(
        U=0.0,
        p0=PlateField.zeros(grid, "free"),
        F0=load_shape(grid, "uniaxial", 1.0),
        closure="in_vacuo",
    )
    branch = continuation(params, "load", critical * np.linspace(0.5, 1.5, 11))
    onset = branch.onset()
    error = math.inf if onset is None else abs(onset - critical) / critical
    return CheckOutcome(
        name="buckling_onset",
        status="pass" if error <= 0.02 else "fail",
        value=onset,
        threshold=critical,
        detail=f"error relativo {error:.3e}",
    )


def check_kjc_symbols(seed: int = 0) -> CheckOutcome:
    homogeneity = float(kjc.homogeneity_table(1000, seed)["defect"].max())
    strip = kjc.r_strip_table()["abs_r_sqrt_eta"]
    limits = kjc.r_limits(0.5)
    observed = {
        "plus_infinity": kjc.r_symbol(1e6, 1.0, 1.0, 0.5),
        "minus_infinity": kjc.r_symbol(-1e6, 1.0, 1.0, 0.5),
        "zero": kjc.r_symbol(0.0, 1e6, 1.0, 0.5),
    }
    limit_error = max(abs(observed[k] - limits[k]) for k in limits)
    bounded = float(strip.min()) > 0 and math.isfinite(float(strip.max()))
    passed = homogeneity <= 1e-15 and bounded and limit_error <= 1e-4
    return CheckOutcome(
        name="kjc_symbols",
        status="pass" if passed else "fail",
        value=homogeneity,
        threshold=1e-15,
        detail=(
            f"|r sqrt(eta)| en [{strip.min():.3e}, {strip.max():.3e}], "
            f"error de limites {limit_error:.1e}"
        ),
    )


def check_hilbert_round_trip(seed: int = 0) -> CheckOutcome:
    table = kjc.hilbert_round_trip_table((256,), 10, seed)
    row = table.row(0, named=True)
    passed = row["max_interior_residual"] < 1e-5 and row["homogeneous_image"] < 1e-8
    return CheckOutcome(
        name="hilbert_round_trip",
        status="pass" if passed else "fail",
        value=row["max_interior_residual"],
        threshold=1e-5,
        detail=f"imagen del modo homogeneo {row['homogeneous_image']:.1e}",
    )


def check_closure_comparison() -> CheckOutcome:
    config = ScenarioConfig(
        name="selftest-compare",
        grid={"nx": 9, "ny": 9},
        model=ModelSpec(U=2.0),
        time={"T": 1.0, "stride": 8},
        initial={"shape": "mode", "amplitude": 0.05},
        compare=CompareSpec(U_values=[2.0, 4.0, 8.0]),
    )
    frame = scenario_service.compare_closures(config)
    monotone = scenario_service.is_monotone(frame)
    return CheckOutcome(
        name="closure_comparison",
        status="report",
        value=float(monotone),
        detail="sup = " + ", ".join(
            f"U={row['U']:g}: {row['sup_distance']:.3e}" for row in frame.iter_rows(named=True)
        ),
    )


def check_restart() -> CheckOutcome:
    grid = Grid(9, 9)
    params = ModelParams.unloaded(grid, U=2.0, closure="delayed")
    _, (mode,) = bending_eigenpairs(grid, 1)
    initial = PlateState(mode * 0.1, mode * 0.05, 0.0)
    dt = default_dt(grid)

    contiguous = run(initial, "flat", params, dt, 40 * dt)
    first = run(initial, "flat", params, dt, 20 * dt)
    second = run(first.final, first.history, params, dt, 40 * dt)

    equal = np.array_equal(contiguous.final.u.values, second.final.u.values) and np.array_equal(
        contiguous.final.v.values, second.final.v.values
    )
    return CheckOutcome(
        name="restart",
        status="pass" if equal else "fail",
        value=float(np.abs(contiguous.final.u.values - second.final.u.values).max()),
        threshold=0.0,
    )


CHECKS: dict[str, Callable[[], CheckOutcome]] = {
    "oracle_equivalence": check_oracle_equivalence,
    "gradient_check": check_gradient,
    "energy_balance": check_energy_balance,
    "dissipation_finiteness": check_dissipation_finiteness,
    "negative_damping": check_negative_damping,
    "delay_fidelity": check_delay_fidelity,
    "delay_horizon": check_delay_horizon,
    "regularity_bounds": check_regularity_bounds,
    "buckling_onset": check_buckling_onset,
    "kjc_symbols": check_kjc_symbols,
    "hilbert_round_trip": check_hilbert_round_trip,
    "closure_comparison": check_closure_comparison,
    "restart": check_restart,
}


def selftest(names: list[str] | None = None) -> list[CheckOutcome]:
    """Corre las verificaciones pedidas (todas por defecto) en orden."""
    names = names or list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigError(f"Verificaciones desconocidas: {unknown}")

    outcomes = []
    for name in names:
        start = time.perf_counter()
        outcome = CHECKS[name]()
        logger.info(
            f"{name}: {outcome.status} ({time.perf_counter() - start:.1f} s) {outcome.detail}"
        )
        outcomes.append(outcome)
    return outcomes


def run_selftest(out: Path | None = None, names: list[str] | None = None) -> RunManifest:
    """Corre la autoverificacion y, si hay directorio, escribe su manifiesto."""
    settings = get_settings()
    start = time.perf_counter()
    manifest = RunManifest(
        command="selftest",
        name="selftest",
        version=package_version(),
        config={"checks": names or list(CHECKS)},
        settings={
            "linear_solver": settings.linear_solver,
            "threads": settings.threads,
            "seed": settings.seed,
        },
        tolerances={"solver_rtol": settings.solver_rtol, "newton_tol": settings.newton_tol},
        checks=selftest(names),
    )
    manifest.wall_time = time.perf_counter() - start
    if out is not None:
        output.write_manifest(manifest, output.prepare_directory(out))
    return manifest
