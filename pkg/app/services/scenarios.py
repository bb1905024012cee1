"""
Servicio de escenarios: traduce la configuracion a corridas y escribe sus salidas.

Cada operacion publica (simulate, equilibria, kjc_probe, compare_closures) tiene una
version pura que devuelve resultados en memoria, usada por la API, y una version
run_* que escribe CSV y manifiesto en un directorio, usada por la CLI.
"""

import logging
import math
import time

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any

import numpy as np
import polars as pl
from joblib import Parallel, delayed
from pydantic import ValidationError

from app.config import get_settings
from app.errors import ConfigError
from app.models.schemas import (
    CheckOutcome,
    KjcSpec,
    RunManifest,
    ScenarioConfig,
    SweepSpec,
)
from app.services import kjc, output
from app.services.aero import Closure, DelayQuadrature, ModelParams, delay_horizon
from app.services.energy import cumulative_balance, window_contributions
from app.services.history import HistoryBuffer
from app.services.integrator import (
    Trajectory,
    default_dt,
    lco_drift,
    resolve_quadrature,
    run,
)
from app.services.plate import (
    Grid,
    PlateField,
    PlateState,
    bending_eigenpairs,
    h2_norm,
)
from app.services.stationary import (
    EquilibriumBranch,
    continuation,
    critical_load,
    load_shape,
    newton_solve,
)

logger = logging.getLogger(__name__)

# Tolerancia relativa de la deteccion del pandeo frente a la carga critica lineal
BUCKLING_TOLERANCE = 0.02

# Error relativo maximo al recuperar el potencial a partir de su downwash
DOWNWASH_TOLERANCE = 1e-3

# Cociente max/min admitido de <u_x, psi> entre resoluciones
DUALITY_SPREAD = 1.05


def package_version() -> str:
    try:
        return version("panel-flutter-lab")
    except PackageNotFoundError:
        return get_settings().api_version


def format_validation_error(error: ValidationError, source: str) -> str:
    """Mensaje con la ubicacion punteada de cada campo invalido."""
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "(raiz)"
        parts.append(f"{location}: {item['msg']}")
    return f"{source}: " + "; ".join(parts)


class ScenarioService:
    """Servicio que ejecuta escenarios configurados."""

    def __init__(self) -> None:
        self._settings = get_settings()

    # -----------------------------------------------------------------------
    # Configuracion
    # -----------------------------------------------------------------------

    def load_config(self, path: Path) -> ScenarioConfig:
        """Lee y valida un escenario TOML."""
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"No se pudo leer {path}: {e}") from e
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
        return self.parse_config(data, str(path))

    def parse_config(self, data: dict[str, Any], source: str = "config") -> ScenarioConfig:
        try:
            return ScenarioConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigError(format_validation_error(e, source)) from e

    def build_grid(self, config: ScenarioConfig) -> Grid:
        spec = config.grid
        return Grid(spec.nx, spec.ny, spec.lx, spec.ly)

    def build_params(
        self,
        config: ScenarioConfig,
        grid: Grid,
        U: float | None = None,
        closure: Closure | None = None,
    ) -> ModelParams:
        model = config.model
        return ModelParams(
            U=model.U if U is None else U,
            p0=load_shape(grid, config.p0.shape, config.p0.amplitude),
            F0=load_shape(grid, config.f0.shape, config.f0.amplitude),
            k=model.k,
            alpha=model.alpha,
            closure=model.closure if closure is None else closure,
            nonlinear=model.nonlinear,
        )

    def time_step(self, config: ScenarioConfig, grid: Grid) -> float:
        return config.time.dt if config.time.dt is not None else default_dt(grid)

    def initial_state(self, config: ScenarioConfig, grid: Grid) -> PlateState:
        """Dato inicial (u0, u1) en t = 0."""
        spec = config.initial
        if spec.shape == "file":
            return self._initial_from_file(spec.path, grid)
        if spec.shape == "zero":
            return PlateState.zeros(grid)

        if spec.shape == "mode":
            _, modes = bending_eigenpairs(grid, spec.mode)
            shape = modes[-1]
        elif spec.shape == "bump":
            shape = PlateField.from_function(
                grid,
                lambda X, Y: np.sin(np.pi * X / grid.lx) ** 2 * np.sin(np.pi * Y / grid.ly) ** 2,
            )
        else:
            seed = self._settings.seed if spec.seed is None else spec.seed
            rng = np.random.default_rng(seed)
            shape = PlateField.from_interior(grid, rng.standard_normal(grid.n_interior))
            shape = shape * (1.0 / np.abs(shape.values).max())

        return PlateState(shape * spec.amplitude, shape * spec.velocity, 0.0)

    def _initial_from_file(self, path: Path | None, grid: Grid) -> PlateState:
        try:
            data = np.load(path)
            u, v = data["u"], data["v"]
        except (OSError, KeyError, TypeError) as e:
            raise ConfigError(f"No se pudo leer el dato inicial {path}: {e}") from e
        if u.shape != grid.shape or v.shape != grid.shape:
            raise ConfigError(f"initial.path: forma {u.shape} incompatible con {grid.shape}")
        return PlateState(PlateField(grid, u).clamped(), PlateField(grid, v).clamped(), 0.0)

    def quadrature(
        self, config: ScenarioConfig, params: ModelParams, dt: float
    ) -> DelayQuadrature | None:
        """Cuadratura del retardo con los overrides de [delay]."""
        if params.closure != "delayed":
            return None
        base = DelayQuadrature.default(delay_horizon(params.grid, params.U), dt)
        quad = DelayQuadrature(
            n_theta=config.delay.n_theta or base.n_theta,
            n_s=config.delay.n_s or base.n_s,
            t_star=base.t_star,
        )
        return resolve_quadrature(params, dt, quad)

    # -----------------------------------------------------------------------
    # simulate
    # -----------------------------------------------------------------------

    def simulate(
        self,
        config: ScenarioConfig,
        U: float | None = None,
        closure: Closure | None = None,
    ) -> Trajectory:
        """Integra el escenario hasta time.T."""
        grid = self.build_grid(config)
        params = self.build_params(config, grid, U, closure)
        dt = self.time_step(config, grid)
        quad = self.quadrature(config, params, dt)

        if config.prehistory.kind == "file":
            horizon = quad.t_star if quad is not None else 0.0
            history = HistoryBuffer.from_npz(config.prehistory.path, grid, horizon)
            initial = history.sample(history.t_end)
            return run(
                initial, history, params, dt, config.time.T, quad=quad, stride=config.time.stride
            )

        initial = self.initial_state(config, grid)
        return run(initial, "flat", params, dt, config.time.T, quad=quad, stride=config.time.stride)

    def evaluate_expectations(
        self, config: ScenarioConfig, trajectory: Trajectory
    ) -> list[CheckOutcome]:
        """Verificaciones de [expect] mas el balance de energia, que siempre se reporta."""
        expect = config.expect
        checks = [
            CheckOutcome(
                name="energy_balance",
                status="report",
                value=cumulative_balance(trajectory.records),
                detail="suma de |balance_residual|",
            )
        ]
        ut = trajectory.column("ut_norm")
        times = trajectory.times

        if expect.final_ut_norm_max is not None:
            value = float(ut[-1])
            checks.append(_bound_check("final_velocity", value, expect.final_ut_norm_max))

        if expect.window_dissipation_max is not None:
            contributions = window_contributions(trajectory, expect.window)
            value = float(contributions[-1]) if len(contributions) else math.inf
            checks.append(_bound_check("window_dissipation", value, expect.window_dissipation_max))

        if expect.growth_factor_min is not None or expect.decay_factor_min is not None:
            reference = _reference_velocity(times, ut)
            if expect.growth_factor_min is not None:
                value = float(np.max(ut) / reference) if reference > 0 else math.inf
                checks.append(
                    _bound_check("growth", value, expect.growth_factor_min, lower=True)
                )
            if expect.decay_factor_min is not None:
                value = float(reference / ut[-1]) if ut[-1] > 0 else math.inf
                checks.append(_bound_check("decay", value, expect.decay_factor_min, lower=True))

        if expect.equilibrium_distance_max is not None:
            final = trajectory.final.u
            equilibrium = newton_solve(final, trajectory.params)
            value = h2_norm(final - equilibrium)
            checks.append(
                _bound_check("equilibrium_distance", value, expect.equilibrium_distance_max)
            )

        if expect.report_lco_drift:
            drift = lco_drift(trajectory)
            checks.append(
                CheckOutcome(
                    name="lco_drift",
                    status="report",
                    value=None if math.isnan(drift) else drift,
                    detail="menos de tres maximos" if math.isnan(drift) else "",
                )
            )
        return checks

    def run_simulate(self, config: ScenarioConfig, out: Path) -> RunManifest:
        start = time.perf_counter()
        directory = output.prepare_directory(out)
        trajectory = self.simulate(config)

        outputs = [output.write_trajectory(trajectory, directory / "trajectory.csv")]
        if config.output.snapshots:
            outputs += output.write_snapshots(trajectory.states, directory)

        manifest = self.manifest("simulate", config, outputs)
        manifest.checks = self.evaluate_expectations(config, trajectory)
        manifest.tolerances["dt"] = trajectory.dt
        if trajectory.quad is not None:
            manifest.tolerances["delay_n_theta"] = trajectory.quad.n_theta
            manifest.tolerances["delay_n_s"] = trajectory.quad.n_s
            manifest.tolerances["delay_t_star"] = trajectory.quad.t_star
        return self.finish(manifest, directory, start)

    # -----------------------------------------------------------------------
    # equilibria
    # -----------------------------------------------------------------------

    def equilibria(self, config: ScenarioConfig) -> tuple[EquilibriumBranch, float | None]:
        """Continuacion del barrido; devuelve la rama y la carga critica lineal si aplica."""
        sweep = config.sweep or SweepSpec()
        grid = self.build_grid(config)
        params = self.build_params(config, grid)
        values = np.array(sweep.grid_values())

        critical = None
        if sweep.parameter == "load":
            shape = config.f0.shape if config.f0.shape != "zero" else "uniaxial"
            amplitude = config.f0.amplitude or 1.0
            params = ModelParams(
                U=params.U,
                p0=params.p0,
                F0=load_shape(grid, shape, amplitude),
                k=params.k,
                alpha=params.alpha,
                closure=params.closure,
                nonlinear=params.nonlinear,
            )
            if grid.n_interior <= self._settings.stability_max_nodes:
                critical, _ = critical_load(grid, shape)
                critical /= amplitude
            if sweep.relative_to_critical:
                if critical is None:
                    raise ConfigError("sweep.relative_to_critical: malla demasiado grande")
                values = values * critical
        elif sweep.parameter == "pressure":
            shape = config.p0.shape if config.p0.shape != "zero" else "uniform"
            params = ModelParams(
                U=params.U,
                p0=load_shape(grid, shape, config.p0.amplitude or 1.0),
                F0=params.F0,
                k=params.k,
                alpha=params.alpha,
                closure=params.closure,
                nonlinear=params.nonlinear,
            )

        branch = continuation(
            params,
            sweep.parameter,
            values,
            include_delay=sweep.include_delay,
            seed=self._settings.seed,
        )
        return branch, critical

    def run_equilibria(self, config: ScenarioConfig, out: Path) -> RunManifest:
        start = time.perf_counter()
        directory = output.prepare_directory(out)
        branch, critical = self.equilibria(config)
        outputs = [output.write_branch(branch, directory / "branch.csv")]

        manifest = self.manifest("equilibria", config, outputs)
        manifest.checks = self.branch_checks(branch, critical)
        return self.finish(manifest, directory, start)

    def branch_checks(
        self, branch: EquilibriumBranch, critical: float | None
    ) -> list[CheckOutcome]:
        tol = self._settings.newton_tol
        residual = max((p.residual for p in branch.points), default=math.inf)
        checks = [_bound_check("residual_tolerance", residual, tol)]
        if branch.failures:
            checks.append(
                CheckOutcome(
                    name="continuation_failures",
                    status="report",
                    value=float(len(branch.failures)),
                    detail="; ".join(f"{f.value:.6g}: {f.error}" for f in branch.failures[:5]),
                )
            )
        if critical is not None and branch.parameter == "load":
            onset = branch.onset()
            if onset is None:
                checks.append(
                    CheckOutcome(
                        name="buckling_onset",
                        status="fail" if branch.values.max() > critical else "report",
                        threshold=critical,
                        detail="sin perdida de estabilidad en el barrido",
                    )
                )
            else:
                error = abs(onset - critical) / critical
                checks.append(
                    CheckOutcome(
                        name="buckling_onset",
                        status="pass" if error <= BUCKLING_TOLERANCE else "fail",
                        value=onset,
                        threshold=critical,
                        detail=f"error relativo {error:.3e}",
                    )
                )
        return checks

    # -----------------------------------------------------------------------
    # kjc-probe
    # -----------------------------------------------------------------------

    def kjc_probe(self, spec: KjcSpec, seed: int | None = None) -> dict[str, pl.DataFrame]:
        """Tablas de simbolos, de ida y vuelta de Hilbert y, en subsonico, del downwash."""
        seed = self._settings.seed if seed is None else seed
        tables = {
            "r_strip": kjc.r_strip_table(spec.alpha_lp, spec.U),
            "homogeneity": kjc.homogeneity_table(spec.n_points, seed),
            "r_limits": self.r_limits_table(spec),
            "hilbert_round_trip": kjc.hilbert_round_trip_table(
                tuple(spec.node_counts), spec.n_functions, seed
            ),
        }
        if spec.U < 1.0:
            tables["downwash_round_trip"] = self.downwash_round_trip(spec)
            tables["duality"] = kjc.duality_table(
                spec.U,
                spec.alpha_lp,
                tuple(spec.duality_nodes),
                spec.downwash_steps,
                n_jobs=self._settings.threads,
            )
        return tables

    def r_limits_table(self, spec: KjcSpec) -> pl.DataFrame:
        """Limites simbolicos de r frente a evaluaciones en |z| = limit_z."""
        if spec.U == 0:
            return pl.DataFrame(
                schema={
                    "limit": pl.Utf8,
                    "expected_re": pl.Float64,
                    "expected_im": pl.Float64,
                    "observed_re": pl.Float64,
                    "observed_im": pl.Float64,
                    "error": pl.Float64,
                }
            )
        limits = kjc.r_limits(spec.U)
        big = spec.limit_z
        observed = {
            "plus_infinity": kjc.r_symbol(big, 1.0, spec.alpha_lp, spec.U),
            "minus_infinity": kjc.r_symbol(-big, 1.0, spec.alpha_lp, spec.U),
            "zero": kjc.r_symbol(0.0, big, spec.alpha_lp, spec.U),
        }
        return pl.DataFrame(
            [
                {
                    "limit": name,
                    "expected_re": limits[name].real,
                    "expected_im": limits[name].imag,
                    "observed_re": value.real,
                    "observed_im": value.imag,
                    "error": abs(value - limits[name]),
                }
                for name, value in observed.items()
            ]
        )

    def downwash_round_trip(self, spec: KjcSpec) -> pl.DataFrame:
        """Potencial fabricado -> downwash -> potencial, error relativo maximo."""
        n, nt = spec.downwash_nodes, spec.downwash_steps
        dt = 4.0 / nt
        series = kjc.IntervalSeries.from_function(kjc.manufactured_potential, nt, dt, n)
        downwash = kjc.potential_to_downwash(series, spec.U, spec.alpha_lp)
        recovered = kjc.downwash_to_potential(
            downwash, spec.U, spec.alpha_lp, n_jobs=self._settings.threads
        )
        error = np.abs(recovered.values - series.values).max() / np.abs(series.values).max()
        return pl.DataFrame(
            [{"nodes": n, "steps": nt, "U": spec.U, "relative_error": float(error)}]
        )

    def kjc_checks(self, tables: dict[str, pl.DataFrame]) -> list[CheckOutcome]:
        strip = tables["r_strip"]["abs_r_sqrt_eta"]
        checks = [
            _bound_check("kjc_homogeneity", float(tables["homogeneity"]["defect"].max()), 1e-15),
            CheckOutcome(
                name="kjc_r_strip",
                status="pass" if strip.min() > 0 and math.isfinite(strip.max()) else "fail",
                value=float(strip.max() / strip.min()),
                detail="max/min de |r sqrt(eta)| en la franja",
            ),
        ]
        if tables["r_limits"].height:
            checks.append(
                _bound_check("kjc_r_limits", float(tables["r_limits"]["error"].max()), 1e-4)
            )
        hilbert = tables["hilbert_round_trip"].sort("nodes")
        last = hilbert.row(-1, named=True)
        checks.append(
            _bound_check("hilbert_round_trip", last["max_interior_residual"], 1e-5)
        )
        checks.append(
            _bound_check("hilbert_homogeneous", float(hilbert["homogeneous_image"].max()), 1e-8)
        )
        if "downwash_round_trip" in tables:
            error = float(tables["downwash_round_trip"]["relative_error"].max())
            checks.append(_bound_check("downwash_round_trip", error, DOWNWASH_TOLERANCE))
        if "duality" in tables:
            pairing = tables["duality"]["pairing"].abs()
            checks.append(
                _bound_check("kjc_duality", float(pairing.max() / pairing.min()), DUALITY_SPREAD)
            )
        return checks

    def run_kjc_probe(self, config: ScenarioConfig, out: Path) -> RunManifest:
        start = time.perf_counter()
        directory = output.prepare_directory(out)
        tables = self.kjc_probe(config.kjc or KjcSpec())
        outputs = [output.write_table(t, directory / f"{name}.csv") for name, t in tables.items()]
        manifest = self.manifest("kjc-probe", config, outputs)
        manifest.checks = self.kjc_checks(tables)
        return self.finish(manifest, directory, start)

    # -----------------------------------------------------------------------
    # compare-closures
    # -----------------------------------------------------------------------

    def _closure_distance(
        self,
        config: ScenarioConfig,
        U: float,
        closures: tuple[Closure, Closure] = ("piston_classical", "delayed"),
    ) -> dict[str, float | str]:
        baseline, target = closures
        first = self.simulate(config, U=U, closure=baseline)
        second = self.simulate(config, U=U, closure=target)
        distances = [h2_norm(a.u - b.u) for a, b in zip(first.states, second.states)]
        return {
            "U": U,
            "baseline": baseline,
            "target": target,
            "t_star": delay_horizon(first.grid, U),
            "sup_distance": float(max(distances)),
            "terminal_distance": float(distances[-1]),
        }

    def compare_closures(self, config: ScenarioConfig, n_jobs: int | None = None) -> pl.DataFrame:
        """
        Distancias entre piston clasico y potencial con retardo a lo largo del barrido en U.

        Con compare.identity_check se agrega una fila del piston clasico contra si mismo
        en la primera U, cuya distancia debe ser exactamente nula.
        """
        spec = config.compare
        if spec is None:
            raise ConfigError("compare-closures requiere la seccion [compare]")
        n_jobs = n_jobs or self._settings.threads
        jobs = [(U, ("piston_classical", "delayed")) for U in spec.U_values]
        if spec.identity_check:
            jobs.append((spec.U_values[0], ("piston_classical", "piston_classical")))
        logger.info(f"Comparando cierres en U = {spec.U_values} ({n_jobs} hilos)")
        rows = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(self._closure_distance)(config, U, closures) for U, closures in jobs
        )
        return pl.DataFrame(rows)

    @staticmethod
    def sweep_rows(frame: pl.DataFrame) -> pl.DataFrame:
        """Filas del barrido piston clasico frente a retardo, ordenadas por U."""
        return frame.filter(pl.col("baseline") != pl.col("target")).sort("U")

    @classmethod
    def is_monotone(cls, frame: pl.DataFrame) -> bool:
        distances = cls.sweep_rows(frame)["sup_distance"].to_numpy()
        return bool(np.all(np.diff(distances) <= 0.0))

    def run_compare_closures(self, config: ScenarioConfig, out: Path) -> RunManifest:
        start = time.perf_counter()
        directory = output.prepare_directory(out)
        frame = self.compare_closures(config)
        outputs = [output.write_table(frame, directory / "closure_distance.csv")]
        manifest = self.manifest("compare-closures", config, outputs)
        horizons = self.sweep_rows(frame)["t_star"].to_numpy()
        manifest.checks = [
            CheckOutcome(
                name="closure_comparison",
                status="report",
                value=float(self.is_monotone(frame)),
                detail="1 si la distancia sup es no creciente en U",
            ),
            CheckOutcome(
                name="delay_horizon_monotone",
                status="pass" if np.all(np.diff(horizons) <= 0.0) else "fail",
            ),
        ]
        identity = frame.filter(pl.col("baseline") == pl.col("target"))
        if identity.height:
            manifest.checks.append(
                _bound_check("closure_identity", float(identity["sup_distance"].max()), 0.0)
            )
        return self.finish(manifest, directory, start)

    # -----------------------------------------------------------------------
    # Manifiesto
    # -----------------------------------------------------------------------

    def manifest(
        self, command: str, config: ScenarioConfig, outputs: list[Path]
    ) -> RunManifest:
        settings = self._settings
        return RunManifest(
            command=command,
            name=config.name,
            version=package_version(),
            config=config.model_dump(mode="json"),
            settings={
                "linear_solver": settings.linear_solver,
                "threads": settings.threads,
                "seed": settings.seed,
            },
            tolerances={
                "solver_rtol": settings.solver_rtol,
                "newton_tol": settings.newton_tol,
            },
            outputs=[p.name for p in outputs],
        )

    def finish(self, manifest: RunManifest, directory: Path, start: float) -> RunManifest:
        manifest.wall_time = time.perf_counter() - start
        output.write_manifest(manifest, directory)
        failed = [c.name for c in manifest.checks if c.status == "fail"]
        if failed:
            logger.warning(f"{manifest.command} {manifest.name}: verificaciones fallidas {failed}")
        else:
            logger.info(f"{manifest.command} {manifest.name}: listo en {manifest.wall_time:.1f} s")
        return manifest


def _reference_velocity(times: np.ndarray, ut: np.ndarray) -> float:
    """||u_t|| una unidad de tiempo despues del inicio (el dato inicial puede tener u1 = 0)."""
    index = int(np.searchsorted(times, times[0] + 1.0))
    return float(ut[min(index, len(ut) - 1)])


def _bound_check(
    name: str, value: float, threshold: float, lower: bool = False
) -> CheckOutcome:
    """pass si value <= threshold (o >= con lower=True)."""
    passed = value >= threshold if lower else value <= threshold
    return CheckOutcome(
        name=name,
        status="pass" if passed else "fail",
        value=value if math.isfinite(value) else None,
        threshold=threshold,
    )


# Instancia singleton del servicio
scenario_service = ScenarioService()
