"""
Estados estacionarios de la placa.

Resuelve Delta^2 u - [u, v(u) + F0] = p0 - U u_x por Newton con Jacobiano analitico
exacto, y sigue ramas de equilibrio en la carga, la presion o la velocidad U.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Literal

import numpy as np
import polars as pl
import scipy.linalg as la
import scipy.sparse as sp

from app.config import get_settings
from app.errors import ConfigError, LabError, NearBifurcationError, NonConvergenceError
from app.services.aero import (
    DelayQuadrature,
    ModelParams,
    delay_horizon,
    delay_kernel,
    lowfreq_stiffness,
)
from app.services.plate import (
    Grid,
    PlateField,
    bending_solver,
    h2_norm,
    inner,
    interior_curvatures,
    plate_operators,
    vk_force,
)

logger = logging.getLogger(__name__)

LoadShape = Literal["zero", "uniform", "bump", "uniaxial", "biaxial", "shear"]
SweepParameter = Literal["load", "U", "pressure"]

# Condicion maxima aceptada del Jacobiano de Newton
MAX_CONDITION = 1e13

# Amplitudes para sembrar la rama no trivial a lo largo del modo critico
BRANCH_SEEDS = (0.01, 0.1, 1.0)

# Norma H^2 por debajo de la cual un equilibrio se considera trivial
TRIVIAL_NORM = 1e-6


def load_shape(grid: Grid, shape: LoadShape, amplitude: float = 1.0) -> PlateField:
    """
    Campos de carga con nombre.

    Para F0 (funcion de Airy de la carga en el plano):
        uniaxial: -(y - ly/2)^2 / 2, compresion uniforme en x
        biaxial:  -((x - lx/2)^2 + (y - ly/2)^2) / 2
        shear:    (x - lx/2)(y - ly/2)
    Para p0: uniform (constante) o bump (sin(pi x) sin(pi y) en la placa).
    """
    cx, cy = grid.lx / 2.0, grid.ly / 2.0
    shapes = {
        "zero": lambda X, Y: np.zeros_like(X),
        "uniform": lambda X, Y: np.ones_like(X),
        "bump": lambda X, Y: np.sin(np.pi * X / grid.lx) * np.sin(np.pi * Y / grid.ly),
        "uniaxial": lambda X, Y: -0.5 * (Y - cy) ** 2,
        "biaxial": lambda X, Y: -0.5 * ((X - cx) ** 2 + (Y - cy) ** 2),
        "shear": lambda X, Y: (X - cx) * (Y - cy),
    }
    if shape not in shapes:
        raise ConfigError(f"Forma de carga desconocida: {shape}")
    field_ = PlateField.from_function(grid, shapes[shape], "free")
    return field_ * amplitude


def flow_coefficient(params: ModelParams) -> float:
    """Coeficiente del termino estacionario en u_x del cierre."""
    if params.closure == "in_vacuo":
        return 0.0
    if params.closure == "piston_lowfreq":
        return lowfreq_stiffness(params.U)
    return params.U


@lru_cache(maxsize=8)
def _stationary_delay_matrix(grid: Grid, U: float, quad: DelayQuadrature) -> np.ndarray:
    """q-bar(u) para historial constante como matriz densa interior x interior."""
    ops = plate_operators(grid)
    kernel = delay_kernel(grid, U, quad).stationary_matrix()
    curvature = sp.vstack(ops.curvature_full, format="csr")
    full = (kernel @ curvature).toarray().reshape(grid.nx, grid.ny, grid.n_interior)
    return full[1:-1, 1:-1, :].reshape(grid.n_interior, grid.n_interior)


@lru_cache(maxsize=8)
def _dense_bending(grid: Grid) -> tuple[np.ndarray, tuple]:
    matrix = plate_operators(grid).bending.toarray()
    return matrix, la.cho_factor(matrix)


def default_stationary_quadrature(params: ModelParams) -> DelayQuadrature:
    return DelayQuadrature(n_theta=32, n_s=64, t_star=delay_horizon(params.grid, params.U))


class StationaryProblem:
    """Residuo, Jacobiano y norma dual del problema estacionario."""

    def __init__(
        self,
        params: ModelParams,
        include_delay: bool = False,
        quad: DelayQuadrature | None = None,
    ) -> None:
        self.params = params
        self.grid = params.grid
        self.ops = plate_operators(self.grid)
        self.flow = flow_coefficient(params)
        self.delay: np.ndarray | None = None
        if include_delay:
            if params.closure != "delayed":
                raise ConfigError("El kernel estacionario solo aplica al cierre con retardo")
            quad = quad or default_stationary_quadrature(params)
            self.delay = _stationary_delay_matrix(self.grid, params.U, quad)

    def residual(self, x: np.ndarray) -> np.ndarray:
        """R(u) en los nodos interiores."""
        params = self.params
        r = self.ops.bending @ x - params.p0.interior + self.flow * (self.ops.dx @ x)
        if params.nonlinear:
            r = r + vk_force(PlateField.from_interior(self.grid, x), params.F0).interior
        if self.delay is not None:
            r = r + self.delay @ x
        return r

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """J = B - S_{v+F0} + 2 K_u^T B^{-1} K_u + c_U D_x (+ Q)."""
        params = self.params
        dense_b, factor = _dense_bending(self.grid)
        jac = dense_b + self.flow * self.ops.dx.toarray()
        if params.nonlinear:
            u = PlateField.from_interior(self.grid, x)
            curvatures = interior_curvatures(u)
            rhs = self.ops.stress_apply(curvatures, x)
            stress = -la.cho_solve(factor, rhs)
            stiffness = self.ops.stress_matrix(curvatures).toarray()
            jac = (
                jac
                - self.ops.weighted_stress_matrix(stress + params.F0.interior).toarray()
                + 2.0 * stiffness.T @ la.cho_solve(factor, stiffness)
            )
        if self.delay is not None:
            jac = jac + self.delay
        return jac

    def dual_norm(self, r: np.ndarray) -> float:
        """sqrt(<B^{-1} R, R>_h), equivalente a un desplazamiento."""
        value = self.grid.cell_area * float(r @ bending_solver(self.grid).solve(r))
        return float(np.sqrt(max(value, 0.0)))

    def stability(self, x: np.ndarray) -> float:
        """Menor parte real del espectro del Jacobiano (positivo = estable)."""
        jac = self.jacobian(x)
        if np.allclose(jac, jac.T, rtol=0.0, atol=1e-9 * np.abs(jac).max()):
            return float(la.eigvalsh(0.5 * (jac + jac.T))[0])
        return float(np.min(np.linalg.eigvals(jac).real))


def static_residual(
    u: PlateField,
    params: ModelParams,
    include_delay: bool = False,
    quad: DelayQuadrature | None = None,
) -> PlateField:
    """Delta^2 u - [u, v(u) + F0] - p0 + U u_x (+ q-bar)."""
    problem = StationaryProblem(params, include_delay, quad)
    return PlateField.from_interior(u.grid, problem.residual(u.interior))


@dataclass
class NewtonResult:
    u: PlateField
    residual: float
    iterations: int


def _newton(
    problem: StationaryProblem, x0: np.ndarray, tol: float, max_iter: int
) -> NewtonResult:
    x = x0.copy()
    r = problem.residual(x)
    norm = problem.dual_norm(r)

    for iteration in range(max_iter + 1):
        if norm <= tol:
            return NewtonResult(PlateField.from_interior(problem.grid, x), norm, iteration)
        if iteration == max_iter:
            break

        jac = problem.jacobian(x)
        condition = np.linalg.cond(jac)
        if not condition < MAX_CONDITION:
            raise NearBifurcationError(f"Jacobiano casi singular (cond={condition:.3e})", norm)
        dx = la.solve(jac, -r)

        # Busqueda lineal por mitades sobre la norma del residuo
        lam = 1.0
        for _ in range(12):
            x_try = x + lam * dx
            r_try = problem.residual(x_try)
            norm_try = problem.dual_norm(r_try)
            if norm_try < norm:
                break
            lam *= 0.5
        else:
            raise NonConvergenceError("La busqueda lineal no redujo el residuo", norm)

        x, r, norm = x_try, r_try, norm_try
        logger.debug(f"Newton iter {iteration + 1}: residuo={norm:.3e}, paso={lam}")

    raise NonConvergenceError(f"Newton no convergio en {max_iter} iteraciones", norm)


def newton_solve(
    u0: PlateField,
    params: ModelParams,
    tol: float | None = None,
    max_iter: int | None = None,
    include_delay: bool = False,
    quad: DelayQuadrature | None = None,
) -> PlateField:
    """Equilibrio por Newton amortiguado desde u0."""
    settings = get_settings()
    tol = settings.newton_tol if tol is None else tol
    max_iter = settings.newton_max_iter if max_iter is None else max_iter
    if tol <= 0:
        raise ConfigError(f"tol debe ser positivo (recibido {tol})")
    problem = StationaryProblem(params, include_delay, quad)
    return _newton(problem, u0.interior, tol, max_iter).u


def critical_load(grid: Grid, shape: LoadShape = "uniaxial") -> tuple[float, PlateField]:
    """
    Carga critica de pandeo lineal: menor lambda > 0 con B h = lambda S_F h.

    Se resuelve el problema generalizado S_F h = mu B h y lambda = 1/max(mu).
    """
    ops = plate_operators(grid)
    unit = load_shape(grid, shape)
    pencil = ops.weighted_stress_matrix(unit.interior).toarray()
    values, vectors = la.eigh(pencil, ops.bending.toarray())
    top = int(np.argmax(values))
    if values[top] <= 0:
        raise ConfigError(f"La carga '{shape}' no produce pandeo")
    mode = vectors[:, top]
    mode = mode / mode[np.argmax(np.abs(mode))]
    return float(1.0 / values[top]), PlateField.from_interior(grid, mode)


@dataclass
class BranchPoint:
    value: float
    u: PlateField
    residual: float
    iterations: int
    stability: float | None
    trivial_stability: float | None

    @property
    def norm(self) -> float:
        return h2_norm(self.u)

    @property
    def asymmetry(self) -> float:
        """<u, x - lx/2>_h; nulo para equilibrios simetricos en x."""
        grid = self.u.grid
        odd = PlateField.from_function(grid, lambda X, Y: X - grid.lx / 2.0, "free")
        return inner(self.u, odd)


@dataclass
class BranchFailure:
    value: float
    error: str
    residual: float | None


@dataclass
class EquilibriumBranch:
    """Rama de equilibrios a lo largo de un parametro."""

    parameter: str
    points: list[BranchPoint] = field(default_factory=list)
    failures: list[BranchFailure] = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.points])

    @property
    def norms(self) -> np.ndarray:
        return np.array([p.norm for p in self.points])

    def onset(self) -> float | None:
        """Cruce por cero del indicador de estabilidad de la rama trivial."""
        pairs = [
            (p.value, p.trivial_stability) for p in self.points if p.trivial_stability is not None
        ]
        for (v0, s0), (v1, s1) in zip(pairs, pairs[1:]):
            if s0 > 0 >= s1 or s0 < 0 <= s1:
                return v0 + (v1 - v0) * s0 / (s0 - s1)
        return None

    def first_nontrivial(self, threshold: float = TRIVIAL_NORM) -> float | None:
        for point in self.points:
            if point.norm > threshold:
                return point.value
        return None

    def distance(self, u: PlateField) -> float:
        """Distancia H^2 discreta de u al conjunto de equilibrios de la rama."""
        if not self.points:
            return float("inf")
        return min(h2_norm(u - p.u) for p in self.points)

    def to_frame(self) -> pl.DataFrame:
        return pl.DataFrame(
            {
                "parameter": [self.parameter] * len(self.points),
                "value": [p.value for p in self.points],
                "h2_norm": [p.norm for p in self.points],
                "residual": [p.residual for p in self.points],
                "iterations": [p.iterations for p in self.points],
                "stability": [p.stability for p in self.points],
                "trivial_stability": [p.trivial_stability for p in self.points],
                "asymmetry": [p.asymmetry for p in self.points],
            },
            schema_overrides={"stability": pl.Float64, "trivial_stability": pl.Float64},
        )


def with_parameter(
    params: ModelParams, parameter: SweepParameter, value: float, base: ModelParams
) -> ModelParams:
    """Copia de params con el parametro de continuacion fijado en value."""
    if parameter == "load":
        return replace(params, F0=base.F0 * value)
    if parameter == "pressure":
        return replace(params, p0=base.p0 * value)
    if parameter == "U":
        return replace(params, U=float(value))
    raise ConfigError(f"Parametro de continuacion desconocido: {parameter}")


def continuation(
    params: ModelParams,
    parameter: SweepParameter,
    values: list[float] | np.ndarray,
    include_delay: bool = False,
    quad: DelayQuadrature | None = None,
    seed: int = 0,
    tol: float | None = None,
) -> EquilibriumBranch:
    """
    Continuacion natural: cada equilibrio arranca del anterior.

    Para load y pressure los campos base de params se escalan por el valor.
    Si la rama trivial pierde estabilidad se siembra Newton a lo largo del modo critico.
    """
    settings = get_settings()
    tol = settings.newton_tol if tol is None else tol
    values = np.asarray(values, dtype=float)
    steps = np.diff(values)
    if len(values) == 0 or not (np.all(steps > 0) or np.all(steps < 0)):
        raise ConfigError("Los valores del barrido deben ser estrictamente monotonos")

    grid = params.grid
    rng = np.random.default_rng(seed)
    check_stability = grid.nx * grid.ny <= settings.stability_max_nodes
    zero = np.zeros(grid.n_interior)

    branch = EquilibriumBranch(parameter=parameter)
    guess = zero.copy()
    logger.info(f"Continuacion en {parameter}: {len(values)} valores [{values[0]}, {values[-1]}]")

    for value in values:
        try:
            current = with_parameter(params, parameter, float(value), params)
            problem = StationaryProblem(current, include_delay, quad)
        except LabError as e:
            branch.failures.append(BranchFailure(float(value), str(e), None))
            continue

        trivial_stability = problem.stability(zero) if check_stability else None
        try:
            result = _newton(problem, guess, tol, settings.newton_max_iter)
        except (NonConvergenceError, NearBifurcationError) as e:
            logger.warning(f"{parameter}={value}: {e}")
            branch.failures.append(BranchFailure(float(value), str(e), e.residual))
            guess = 1e-3 * rng.standard_normal(grid.n_interior)
            continue

        unstable = trivial_stability is not None and trivial_stability < 0
        if unstable and h2_norm(result.u) <= TRIVIAL_NORM:
            result = _seed_branch(problem, result, tol, settings.newton_max_iter)

        stability = problem.stability(result.u.interior) if check_stability else None
        branch.points.append(
            BranchPoint(
                value=float(value),
                u=result.u,
                residual=result.residual,
                iterations=result.iterations,
                stability=stability,
                trivial_stability=trivial_stability,
            )
        )
        guess = result.u.interior.copy()

    logger.info(
        f"Continuacion terminada: {len(branch.points)} equilibrios, {len(branch.failures)} fallos"
    )
    return branch


def _seed_branch(
    problem: StationaryProblem, trivial: NewtonResult, tol: float, max_iter: int
) -> NewtonResult:
    """Busca un equilibrio no trivial a lo largo del modo critico de la rama trivial."""
    jac = problem.jacobian(np.zeros(problem.grid.n_interior))
    values, vectors = la.eigh(0.5 * (jac + jac.T))
    mode = vectors[:, 0] / np.abs(vectors[:, 0]).max()

    for amplitude in BRANCH_SEEDS:
        try:
            result = _newton(problem, amplitude * mode, tol, max_iter)
        except (NonConvergenceError, NearBifurcationError):
            continue
        if h2_norm(result.u) > TRIVIAL_NORM:
            logger.info(f"Rama no trivial sembrada con amplitud {amplitude}")
            return result
    return trivial
