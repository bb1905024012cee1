"""
Cierres aerodinamicos sobre la placa.

Incluye la teoria de piston clasica, la variante de baja frecuencia, el potencial
aeroelastico con retardo q^u(t) y su horizonte t*, y un cierre en vacio.

El potencial con retardo se calcula como

    q^u(x, t) = 1/(2 pi) int_0^{t*} ds int_0^{2 pi} dtheta [M_theta^2 u_ext](x - (U + sin theta) s,
                                                                     y - s cos theta, t - s)

con M_theta = sin(theta) d_x + cos(theta) d_y, trapecio periodico en theta,
trapecio compuesto en s, convolucion cubica C^1 en espacio (cero fuera de la placa)
e interpolacion lineal en el tiempo del historial.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np
import scipy.sparse as sp
from scipy.integrate import trapezoid

from app.errors import ConfigError, DegenerateSpeedError, DomainError, HistoryUnderflowError
from app.services.history import HistoryBuffer
from app.services.plate import Grid, PlateField, PlateState, check_same_grid, l2_norm, x_derivative

logger = logging.getLogger(__name__)

Closure = Literal["piston_classical", "piston_lowfreq", "delayed", "in_vacuo"]

CLOSURES: tuple[str, ...] = ("piston_classical", "piston_lowfreq", "delayed", "in_vacuo")

# Tolerancia para decidir si un punto desplazado sigue dentro de la placa
_INSIDE_TOL = 1e-12


@dataclass
class ModelParams:
    """Parametros fisicos de la placa y del flujo."""

    U: float
    p0: PlateField
    F0: PlateField
    k: float = 0.0
    alpha: float = 0.0
    closure: Closure = "piston_classical"
    nonlinear: bool = True

    def __post_init__(self) -> None:
        check_same_grid(self.p0, self.F0)
        if self.closure not in CLOSURES:
            raise ConfigError(f"Cierre desconocido: {self.closure}")
        if not self.U >= 0:
            raise ConfigError(f"U debe ser >= 0 (recibido {self.U})")
        if self.U == 1.0:
            raise DegenerateSpeedError("U = 1 (transonico) no esta permitido")
        if self.closure == "piston_lowfreq" and self.U <= 1.0:
            raise DomainError(f"piston_lowfreq requiere U > 1 (recibido {self.U})")
        if self.k < 0:
            raise ConfigError(f"k debe ser >= 0 (recibido {self.k})")
        if self.alpha < 0:
            raise ConfigError(f"alpha debe ser >= 0 (recibido {self.alpha})")

    @property
    def grid(self) -> Grid:
        return self.p0.grid

    @classmethod
    def unloaded(cls, grid: Grid, U: float = 0.0, **kwargs) -> "ModelParams":
        """Parametros con p0 = F0 = 0."""
        return cls(U=U, p0=PlateField.zeros(grid, "free"), F0=PlateField.zeros(grid, "free"), **kwargs)


@dataclass(frozen=True)
class DelayQuadrature:
    """Regla producto para el potencial con retardo; n_s cuenta intervalos en s."""

    n_theta: int
    n_s: int
    t_star: float

    def __post_init__(self) -> None:
        if self.n_theta < 8 or self.n_theta % 2:
            raise ConfigError(f"n_theta debe ser par y >= 8 (recibido {self.n_theta})")
        if self.n_s < 4:
            raise ConfigError(f"n_s debe ser >= 4 (recibido {self.n_s})")
        if not self.t_star > 0:
            raise ConfigError(f"t* debe ser positivo (recibido {self.t_star})")

    # Limite de nodos en s para la regla por defecto
    MAX_DEFAULT_NS = 128

    @classmethod
    def default(cls, t_star: float, dt: float) -> "DelayQuadrature":
        """n_theta = 32 y ds ~ dt, acotado por MAX_DEFAULT_NS."""
        n_s = max(4, min(math.ceil(t_star / dt - 1e-9), cls.MAX_DEFAULT_NS))
        return cls(n_theta=32, n_s=n_s, t_star=t_star)

    @property
    def ds(self) -> float:
        return self.t_star / self.n_s

    @property
    def thetas(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta

    @property
    def theta_weight(self) -> float:
        return 2.0 * np.pi / self.n_theta

    @property
    def s_nodes(self) -> np.ndarray:
        return self.ds * np.arange(self.n_s + 1)

    @property
    def s_weights(self) -> np.ndarray:
        weights = np.full(self.n_s + 1, self.ds)
        weights[[0, -1]] *= 0.5
        return weights

    def refined(self) -> "DelayQuadrature":
        return DelayQuadrature(2 * self.n_theta, 2 * self.n_s, self.t_star)


# ---------------------------------------------------------------------------
# Piston
# ---------------------------------------------------------------------------


def lowfreq_damping(U: float) -> float:
    """Coeficiente efectivo de u_t en piston de baja frecuencia: U(U^2-2)/(U^2-1)^{3/2}."""
    if U <= 1.0:
        raise DomainError(f"La formula de baja frecuencia requiere U > 1 (recibido {U})")
    return U * (U**2 - 2.0) / (U**2 - 1.0) ** 1.5


def lowfreq_stiffness(U: float) -> float:
    """Coeficiente de u_x en piston de baja frecuencia: U^2/sqrt(U^2-1)."""
    if U <= 1.0:
        raise DomainError(f"La formula de baja frecuencia requiere U > 1 (recibido {U})")
    return U**2 / math.sqrt(U**2 - 1.0)


def piston_classical(state: PlateState, params: ModelParams) -> PlateField:
    """p0 - u_t - U u_x."""
    ux = x_derivative(state.u)
    values = params.p0.values - state.v.values - params.U * ux.values
    return PlateField(state.grid, values, "free")


def piston_lowfreq(state: PlateState, params: ModelParams) -> PlateField:
    """p0 - U/sqrt(U^2-1) ((U^2-2)/(U^2-1) u_t + U u_x)."""
    U = params.U
    if U <= 1.0:
        raise DomainError(f"piston_lowfreq requiere U > 1 (recibido {U})")
    ux = x_derivative(state.u)
    factor = U / math.sqrt(U**2 - 1.0)
    values = params.p0.values - factor * (
        (U**2 - 2.0) / (U**2 - 1.0) * state.v.values + U * ux.values
    )
    return PlateField(state.grid, values, "free")


def aero_damping(params: ModelParams) -> float:
    """Coeficiente de u_t que el integrador trata de forma implicita."""
    if params.closure == "piston_lowfreq":
        return lowfreq_damping(params.U)
    if params.closure == "in_vacuo":
        return 0.0
    return 1.0


# ---------------------------------------------------------------------------
# Potencial con retardo
# ---------------------------------------------------------------------------


def delay_horizon(grid: Grid, U: float, n_theta: int = 64) -> float:
    """
    Horizonte de retardo t* por barrido sobre nodos y direcciones.

    Para cada (x, theta) el punto x - s (U + sin theta, cos theta) sale del rectangulo
    en un tiempo analitico; t* es el maximo de esos tiempos de salida.
    """
    if U == 1.0:
        raise DegenerateSpeedError("U = 1: la deriva se anula en theta = -pi/2 y t* es infinito")
    if U < 0:
        raise DomainError(f"U debe ser >= 0 (recibido {U})")

    X, Y = grid.mesh()
    X = X.ravel()[:, None]
    Y = Y.ravel()[:, None]
    thetas = 2.0 * np.pi * np.arange(n_theta) / n_theta
    a = (U + np.sin(thetas))[None, :]
    b = np.cos(thetas)[None, :]

    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(a > 0, X / a, np.where(a < 0, (grid.lx - X) / -a, np.inf))
        ty = np.where(b > 0, Y / b, np.where(b < 0, (grid.ly - Y) / -b, np.inf))

    exit_times = np.minimum(tx, ty)
    t_star = float(np.max(exit_times))
    if not np.isfinite(t_star):
        raise DegenerateSpeedError(f"Horizonte infinito para U={U}")
    return t_star


def _cubic_weights(p: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Indice base (M,) y pesos (M, 4) de convolucion cubica (Keys, a = -1/2) en una direccion.

    Los nodos fantasma -1 y n se extrapolan cuadraticamente, c_{-1} = 3 c_0 - 3 c_1 + c_2,
    de modo que los cuatro pesos actuan sobre los nodos base, ..., base + 3 de la malla.
    """
    p = np.clip(p, 0.0, n - 1)
    i = np.minimum(np.floor(p).astype(int), n - 2)
    f = p - i
    f2, f3 = f * f, f * f * f
    w = np.stack(
        [
            0.5 * (-f3 + 2.0 * f2 - f),
            0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
            0.5 * (-3.0 * f3 + 4.0 * f2 + f),
            0.5 * (f3 - f2),
        ],
        axis=1,
    )

    low = i == 0
    if np.any(low):
        w0 = w[low, 0]
        w[low] = np.stack(
            [w[low, 1] + 3.0 * w0, w[low, 2] - 3.0 * w0, w[low, 3] + w0, np.zeros_like(w0)],
            axis=1,
        )
    high = i == n - 2
    if np.any(high):
        w3 = w[high, 3]
        w[high] = np.stack(
            [np.zeros_like(w3), w[high, 0] + w3, w[high, 1] - 3.0 * w3, w[high, 2] + 3.0 * w3],
            axis=1,
        )
    base = np.clip(i - 1, 0, n - 4)
    return base, w


def _interpolation_stencil(
    grid: Grid, X: np.ndarray, Y: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Indices planos (M, 16) y pesos (M, 16) de convolucion cubica tensorial.

    El interpolante es C^1 y de tercer orden. Los puntos fuera de [0, lx] x [0, ly]
    reciben pesos nulos (extension por cero).
    """
    X = np.asarray(X, dtype=float).ravel()
    Y = np.asarray(Y, dtype=float).ravel()
    inside = (
        (X >= -_INSIDE_TOL)
        & (X <= grid.lx + _INSIDE_TOL)
        & (Y >= -_INSIDE_TOL)
        & (Y <= grid.ly + _INSIDE_TOL)
    )
    bx, wx = _cubic_weights(X / grid.hx, grid.nx)
    by, wy = _cubic_weights(Y / grid.hy, grid.ny)
    offsets = np.arange(4)
    ix = bx[:, None] + offsets[None, :]
    jy = by[:, None] + offsets[None, :]

    idx = (ix[:, :, None] * grid.ny + jy[:, None, :]).reshape(-1, 16)
    weights = (wx[:, :, None] * wy[:, None, :]).reshape(-1, 16)
    weights[~inside] = 0.0
    return idx, weights, inside


def _direction_coefficients(theta: float) -> tuple[float, float, float]:
    """Coeficientes de (u_xx, u_xy, u_yy) en M_theta^2 u."""
    s, c = math.sin(theta), math.cos(theta)
    return s * s, 2.0 * s * c, c * c


def _check_coverage(history: HistoryBuffer, t: float, quad: DelayQuadrature) -> np.ndarray:
    times = t - quad.s_nodes
    if not history.covers(float(times.min()), t):
        raise HistoryUnderflowError(
            f"El historial no cubre la ventana [{t - quad.t_star}, {t}] del retardo"
        )
    return times


def delayed_potential(
    history: HistoryBuffer, t: float, params: ModelParams, quad: DelayQuadrature
) -> PlateField:
    """Evaluacion directa de q^u(t) por cuadratura producto."""
    grid = history.grid
    times = _check_coverage(history, t, quad)
    curvatures = history.sample_curvatures(times)
    X, Y = grid.mesh()
    X, Y = X.ravel(), Y.ravel()
    n_nodes = X.size

    thetas = quad.thetas
    sin_t, cos_t = np.sin(thetas), np.cos(thetas)
    cxx, cxy, cyy = sin_t**2, 2.0 * sin_t * cos_t, cos_t**2
    # fila de cada punto desplazado dentro de la tabla (n_theta, N) de derivadas direccionales
    row_offset = (np.arange(quad.n_theta) * n_nodes).repeat(n_nodes)[:, None]

    total = np.zeros(n_nodes)
    s_weights = quad.s_weights
    for k, s in enumerate(quad.s_nodes):
        uxx, uxy, uyy = (c.ravel() for c in curvatures[k])
        directional = cxx[:, None] * uxx + cxy[:, None] * uxy + cyy[:, None] * uyy
        idx, weights, _ = _interpolation_stencil(
            grid,
            X[None, :] - (params.U + sin_t)[:, None] * s,
            Y[None, :] - cos_t[:, None] * s,
        )
        values = np.sum(directional.ravel()[row_offset + idx] * weights, axis=1)
        per_node = values.reshape(quad.n_theta, n_nodes).sum(axis=0)
        total += s_weights[k] * quad.theta_weight * per_node

    return PlateField(grid, total.reshape(grid.shape) / (2.0 * np.pi), "free")


class DelayKernel:
    """
    Cuadratura del potencial con retardo como una matriz dispersa.

    Actua sobre las curvaturas apiladas del historial, forma (n_s + 1, 3, nx, ny),
    muestreadas en t - s_k.
    """

    def __init__(self, grid: Grid, U: float, quad: DelayQuadrature) -> None:
        self.grid = grid
        self.U = U
        self.quad = quad
        n_nodes = grid.nx * grid.ny
        X, Y = grid.mesh()
        X, Y = X.ravel(), Y.ravel()
        rows = np.repeat(np.arange(n_nodes), 16)

        blocks = []
        s_weights = quad.s_weights
        for k, s in enumerate(quad.s_nodes):
            data, cols = [], []
            for theta in quad.thetas:
                idx, weights, _ = _interpolation_stencil(
                    grid, X - (U + math.sin(theta)) * s, Y - math.cos(theta) * s
                )
                scale = s_weights[k] * quad.theta_weight / (2.0 * np.pi)
                for component, coef in enumerate(_direction_coefficients(theta)):
                    data.append((scale * coef * weights).ravel())
                    cols.append((component * n_nodes + idx).ravel())
            block = sp.coo_matrix(
                (
                    np.concatenate(data),
                    (np.tile(rows, len(data)), np.concatenate(cols)),
                ),
                shape=(n_nodes, 3 * n_nodes),
            ).tocsr()
            block.eliminate_zeros()
            blocks.append(block)

        self.blocks = blocks
        self.matrix = sp.hstack(blocks, format="csr")
        logger.debug(
            f"Kernel de retardo {grid.nx}x{grid.ny}: n_theta={quad.n_theta}, "
            f"n_s={quad.n_s}, nnz={self.matrix.nnz}"
        )

    def apply(self, curvatures: np.ndarray) -> np.ndarray:
        """Valores nodales (nx, ny) a partir de las curvaturas apiladas."""
        return (self.matrix @ curvatures.ravel()).reshape(self.grid.shape)

    def evaluate(self, history: HistoryBuffer, t: float) -> PlateField:
        times = _check_coverage(history, t, self.quad)
        return PlateField(self.grid, self.apply(history.sample_curvatures(times)), "free")

    def stationary_matrix(self) -> sp.csr_matrix:
        """Kernel para historial constante: suma de los bloques en s, forma (N, 3N)."""
        total = self.blocks[0].copy()
        for block in self.blocks[1:]:
            total = total + block
        return total.tocsr()


@lru_cache(maxsize=16)
def delay_kernel(grid: Grid, U: float, quad: DelayQuadrature) -> DelayKernel:
    """Kernel de retardo cacheado por (malla, U, cuadratura)."""
    return DelayKernel(grid, U, quad)


def decay_bound_ratio(
    history: HistoryBuffer, t: float, params: ModelParams, quad: DelayQuadrature, c: float = 1.0
) -> float:
    """||q^u(t)||^2 U / int_{t - c/U}^{t} ||Delta u||^2, con la integral por trapecio."""
    q = delayed_potential(history, t, params, quad)
    times, norms = history.h2_norms(t - c / params.U, t)
    if len(times) < 2:
        raise ConfigError("La ventana de la cota no contiene suficientes instantaneas")
    window = float(trapezoid(norms, times))
    if window == 0.0:
        return 0.0
    return l2_norm(q) ** 2 * params.U / window


# ---------------------------------------------------------------------------
# Ensamble
# ---------------------------------------------------------------------------


def explicit_forcing(
    state: PlateState,
    history: HistoryBuffer | None,
    params: ModelParams,
    quad: DelayQuadrature | None = None,
) -> PlateField:
    """Parte del forzamiento que el integrador trata de forma explicita."""
    grid = check_same_grid(state.u, params.p0)
    if params.closure == "in_vacuo":
        return PlateField(grid, params.p0.values.copy(), "free")

    ux = x_derivative(state.u).values
    if params.closure == "piston_lowfreq":
        values = params.p0.values - lowfreq_stiffness(params.U) * ux
    else:
        values = params.p0.values - params.U * ux

    if params.closure == "delayed":
        if history is None or quad is None:
            raise ConfigError("El cierre con retardo necesita historial y cuadratura")
        q = delay_kernel(grid, params.U, quad).evaluate(history, state.t)
        values = values - q.values

    return PlateField(grid, values, "free")


def rhs_assemble(
    state: PlateState,
    history: HistoryBuffer | None,
    params: ModelParams,
    quad: DelayQuadrature | None = None,
) -> PlateField:
    """Forzamiento total del cierre seleccionado."""
    explicit = explicit_forcing(state, history, params, quad)
    damping = aero_damping(params)
    if damping == 0.0:
        return explicit
    return explicit.with_values(explicit.values - damping * state.v.values)
