"""
Discretizacion espacial de la placa de von Karman empotrada.

Malla rectangular de nodos, operador biarmonico con reflexion de nodos fantasma,
corchete de von Karman, problema de Airy y fuerza no lineal f(u).

Convenciones:
    - Los campos se guardan como arreglos (nx, ny) con x = i*hx, y = j*hy.
    - Las incognitas de un campo empotrado son los nodos interiores, ordenados en C.
    - Producto interno discreto <a, b>_h = hx*hy*sum(w*a*b) con pesos trapezoidales.
"""

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, eigsh, factorized

from app.config import get_settings
from app.errors import DimensionError, SolverError

logger = logging.getLogger(__name__)

BoundaryTag = Literal["clamped", "free"]


@dataclass(frozen=True)
class Grid:
    """Malla de nodos sobre el rectangulo [0, lx] x [0, ly]."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self) -> None:
        # El estencil de 13 puntos necesita al menos 3 nodos interiores por direccion
        if self.nx < 5 or self.ny < 5:
            raise DimensionError(f"La malla necesita nx, ny >= 5 (recibido {self.nx}x{self.ny})")
        if not (self.lx > 0 and self.ly > 0):
            raise DimensionError(f"Extensiones invalidas lx={self.lx}, ly={self.ly}")

    @property
    def hx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def interior_shape(self) -> tuple[int, int]:
        return (self.nx - 2, self.ny - 2)

    @property
    def n_interior(self) -> int:
        return (self.nx - 2) * (self.ny - 2)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.lx, self.nx)

    @cached_property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, self.ly, self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordenadas nodales (X, Y) con indexing='ij'."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    @cached_property
    def weights(self) -> np.ndarray:
        """Pesos trapezoidales: 1/2 en aristas, 1/4 en esquinas."""
        wx = np.ones(self.nx)
        wy = np.ones(self.ny)
        wx[[0, -1]] = 0.5
        wy[[0, -1]] = 0.5
        return np.outer(wx, wy)


@dataclass
class PlateField:
    """Campo escalar muestreado en los nodos de una malla."""

    grid: Grid
    values: np.ndarray
    bc: BoundaryTag = "clamped"

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise DimensionError(
                f"Forma {self.values.shape} incompatible con la malla {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("El campo contiene valores no finitos")

    @classmethod
    def zeros(cls, grid: Grid, bc: BoundaryTag = "clamped") -> "PlateField":
        return cls(grid, np.zeros(grid.shape), bc)

    @classmethod
    def from_function(
        cls,
        grid: Grid,
        fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
        bc: BoundaryTag = "clamped",
    ) -> "PlateField":
        """Muestrea fn(X, Y) en los nodos."""
        X, Y = grid.mesh()
        return cls(grid, np.broadcast_to(fn(X, Y), grid.shape).copy(), bc)

    @classmethod
    def from_interior(
        cls, grid: Grid, interior: np.ndarray, bc: BoundaryTag = "clamped"
    ) -> "PlateField":
        """Campo con frontera nula a partir del vector de nodos interiores."""
        values = np.zeros(grid.shape)
        values[1:-1, 1:-1] = np.asarray(interior).reshape(grid.interior_shape)
        return cls(grid, values, bc)

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:-1, 1:-1].ravel()

    def with_values(self, values: np.ndarray) -> "PlateField":
        return PlateField(self.grid, values, self.bc)

    def clamped(self) -> "PlateField":
        """Copia con los nodos de frontera anulados."""
        values = self.values.copy()
        values[[0, -1], :] = 0.0
        values[:, [0, -1]] = 0.0
        return PlateField(self.grid, values, "clamped")

    def _other(self, other: "PlateField") -> np.ndarray:
        check_same_grid(self, other)
        return other.values

    def __add__(self, other: "PlateField") -> "PlateField":
        return self.with_values(self.values + self._other(other))

    def __sub__(self, other: "PlateField") -> "PlateField":
        return self.with_values(self.values - self._other(other))

    def __mul__(self, scalar: float) -> "PlateField":
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "PlateField":
        return self.with_values(-self.values)


@dataclass
class PlateState:
    """Punto de fase estructural (u, u_t) en el instante t."""

    u: PlateField
    v: PlateField
    t: float = 0.0

    def __post_init__(self) -> None:
        check_same_grid(self.u, self.v)

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @classmethod
    def zeros(cls, grid: Grid, t: float = 0.0) -> "PlateState":
        return cls(PlateField.zeros(grid), PlateField.zeros(grid), t)


def check_same_grid(*fields: PlateField) -> Grid:
    """Verifica que todos los campos compartan malla y la devuelve."""
    grid = fields[0].grid
    for item in fields[1:]:
        if item.grid != grid:
            raise DimensionError(f"Mallas distintas: {grid} vs {item.grid}")
    return grid


# ---------------------------------------------------------------------------
# Operadores dispersos
# ---------------------------------------------------------------------------


def _second_difference(n: int, h: float) -> sp.csr_matrix:
    """Segunda diferencia de Dirichlet sobre los n-2 nodos interiores."""
    m = n - 2
    return sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(m, m), format="csr") / h**2


def _first_difference(n: int, h: float) -> sp.csr_matrix:
    """Diferencia centrada de Dirichlet sobre los n-2 nodos interiores."""
    m = n - 2
    return sp.diags([-1.0, 1.0], [-1, 1], shape=(m, m), format="csr") / (2.0 * h)


def _ghost_second_difference(n: int, h: float) -> sp.csr_matrix:
    """Segunda diferencia en todos los nodos con reflexion u(-1) = u(1), frontera nula."""
    m = n - 2
    rows = sp.lil_matrix((n, m))
    rows[1:-1, :] = _second_difference(n, h).toarray()
    rows[0, 0] = 2.0 / h**2
    rows[n - 1, m - 1] = 2.0 / h**2
    return rows.tocsr()


def _ghost_first_difference(n: int, h: float) -> sp.csr_matrix:
    """Diferencia centrada en todos los nodos; nula en la frontera por la reflexion."""
    m = n - 2
    rows = sp.lil_matrix((n, m))
    rows[1:-1, :] = _first_difference(n, h).toarray()
    return rows.tocsr()


def _injection(n: int) -> sp.csr_matrix:
    """Inyeccion de los nodos interiores en todos los nodos."""
    m = n - 2
    return sp.eye(n, m, k=-1, format="csr")


class PlateOperators:
    """Operadores discretos de una malla, construidos una sola vez."""

    def __init__(self, grid: Grid) -> None:
        self.grid = grid
        nx, ny = grid.shape
        ix = sp.identity(nx - 2, format="csr")
        iy = sp.identity(ny - 2, format="csr")

        # Operadores interior -> interior
        self.dxx = sp.kron(_second_difference(nx, grid.hx), iy, format="csr")
        self.dyy = sp.kron(ix, _second_difference(ny, grid.hy), format="csr")
        self.dxy = sp.kron(
            _first_difference(nx, grid.hx), _first_difference(ny, grid.hy), format="csr"
        )
        self.dx = sp.kron(_first_difference(nx, grid.hx), iy, format="csr")
        self.laplacian_dirichlet = (self.dxx + self.dyy).tocsr()

        # Laplaciano en todos los nodos con fantasmas empotrados
        self.laplacian_full = (
            sp.kron(_ghost_second_difference(nx, grid.hx), _injection(ny))
            + sp.kron(_injection(nx), _ghost_second_difference(ny, grid.hy))
        ).tocsr()
        self.weights = sp.diags(grid.weights.ravel())

        # Curvaturas (u_xx, u_xy, u_yy) en todos los nodos a partir del interior
        self.curvature_full = (
            sp.kron(_ghost_second_difference(nx, grid.hx), _injection(ny), format="csr"),
            sp.kron(
                _ghost_first_difference(nx, grid.hx),
                _ghost_first_difference(ny, grid.hy),
                format="csr",
            ),
            sp.kron(_injection(nx), _ghost_second_difference(ny, grid.hy), format="csr"),
        )

        bending = self.laplacian_full.T @ self.weights @ self.laplacian_full
        self.bending = (0.5 * (bending + bending.T)).tocsr()

        self.dxx_t = self.dxx.T.tocsr()
        self.dyy_t = self.dyy.T.tocsr()
        self.dxy_t = self.dxy.T.tocsr()

    def stress_adjoint(self, curvatures: tuple[np.ndarray, ...], phi: np.ndarray) -> np.ndarray:
        """K_u^T phi con K_u h = [u, h] en los nodos interiores."""
        uxx, uxy, uyy = curvatures
        return (
            self.dyy_t @ (uxx * phi)
            + self.dxx_t @ (uyy * phi)
            - 2.0 * (self.dxy_t @ (uxy * phi))
        )

    def stress_apply(self, curvatures: tuple[np.ndarray, ...], h: np.ndarray) -> np.ndarray:
        """K_u h = [u, h] para h empotrado."""
        uxx, uxy, uyy = curvatures
        return uxx * (self.dyy @ h) + uyy * (self.dxx @ h) - 2.0 * uxy * (self.dxy @ h)

    def stress_matrix(self, curvatures: tuple[np.ndarray, ...]) -> sp.csr_matrix:
        uxx, uxy, uyy = curvatures
        return (
            sp.diags(uxx) @ self.dyy + sp.diags(uyy) @ self.dxx - 2.0 * sp.diags(uxy) @ self.dxy
        ).tocsr()

    def weighted_stress_matrix(self, phi: np.ndarray) -> sp.csr_matrix:
        """Matriz simetrica S_phi con S_phi h = K_h^T phi."""
        d_phi = sp.diags(phi)
        return (
            self.dyy_t @ d_phi @ self.dxx
            + self.dxx_t @ d_phi @ self.dyy
            - 2.0 * (self.dxy_t @ d_phi @ self.dxy)
        ).tocsr()


@lru_cache(maxsize=32)
def plate_operators(grid: Grid) -> PlateOperators:
    """Operadores cacheados por malla."""
    logger.debug(f"Construyendo operadores para malla {grid.nx}x{grid.ny}")
    return PlateOperators(grid)


class LinearSolver:
    """Resolucion repetida de A x = b con factorizacion directa o gradiente conjugado."""

    def __init__(self, matrix: sp.spmatrix, method: str, name: str) -> None:
        settings = get_settings()
        self.matrix = matrix.tocsr()
        self.method = method
        self.name = name
        self.rtol = settings.solver_rtol
        self.maxiter = settings.solver_maxiter
        self._check_tol = max(100.0 * self.rtol, 1e-8)
        if method == "direct":
            self._factor = factorized(self.matrix.tocsc())
        elif method == "cg":
            inv_diag = 1.0 / self.matrix.diagonal()
            n = self.matrix.shape[0]
            self._preconditioner = LinearOperator((n, n), matvec=lambda r: inv_diag * r)
        else:
            raise ValueError(f"Metodo de solver desconocido: {method}")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs_norm = np.linalg.norm(rhs)
        if not np.isfinite(rhs_norm):
            raise ValueError(f"Lado derecho no finito para {self.name}")
        if rhs_norm == 0.0:
            return np.zeros_like(rhs)

        if self.method == "direct":
            x = self._factor(rhs)
        else:
            x, info = cg(
                self.matrix,
                rhs,
                rtol=self.rtol,
                atol=0.0,
                maxiter=self.maxiter,
                M=self._preconditioner,
            )
            if info != 0:
                residual = np.linalg.norm(self.matrix @ x - rhs) / rhs_norm
                raise SolverError(f"CG no convergio para {self.name} (info={info})", residual)

        residual = np.linalg.norm(self.matrix @ x - rhs) / rhs_norm
        if not residual <= self._check_tol:
            raise SolverError(f"Solucion inexacta para {self.name}", residual)
        return x


@lru_cache(maxsize=32)
def _bending_solver(grid: Grid, method: str) -> LinearSolver:
    return LinearSolver(plate_operators(grid).bending, method, "biarmonico")


def bending_solver(grid: Grid) -> LinearSolver:
    """Solver cacheado del biarmonico empotrado."""
    return _bending_solver(grid, get_settings().linear_solver)


@lru_cache(maxsize=32)
def _inertia_solver(grid: Grid, alpha: float, method: str) -> LinearSolver:
    ops = plate_operators(grid)
    matrix = sp.identity(grid.n_interior, format="csr") - alpha * ops.laplacian_dirichlet
    return LinearSolver(matrix, method, "inercia rotacional")


# ---------------------------------------------------------------------------
# Derivadas puntuales
# ---------------------------------------------------------------------------


def _extrapolate_ghosts(values: np.ndarray) -> np.ndarray:
    """Fantasmas por extrapolacion cuadratica u(-1) = 3u(0) - 3u(1) + u(2)."""
    padded = np.pad(values, 1, mode="constant")
    padded[0, 1:-1] = 3 * values[0] - 3 * values[1] + values[2]
    padded[-1, 1:-1] = 3 * values[-1] - 3 * values[-2] + values[-3]
    padded[:, 0] = 3 * padded[:, 1] - 3 * padded[:, 2] + padded[:, 3]
    padded[:, -1] = 3 * padded[:, -2] - 3 * padded[:, -3] + padded[:, -4]
    return padded


def padded_values(field: PlateField) -> np.ndarray:
    """Valores con una capa de nodos fantasma segun la etiqueta de frontera."""
    if field.bc == "clamped":
        return np.pad(field.values, 1, mode="reflect")
    return _extrapolate_ghosts(field.values)


def second_derivatives(field: PlateField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(u_xx, u_xy, u_yy) centrados en todos los nodos."""
    grid = field.grid
    p = padded_values(field)
    uxx = (p[2:, 1:-1] - 2.0 * p[1:-1, 1:-1] + p[:-2, 1:-1]) / grid.hx**2
    uyy = (p[1:-1, 2:] - 2.0 * p[1:-1, 1:-1] + p[1:-1, :-2]) / grid.hy**2
    uxy = (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2]) / (4.0 * grid.hx * grid.hy)
    return uxx, uxy, uyy


def interior_curvatures(field: PlateField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    uxx, uxy, uyy = second_derivatives(field)
    return (
        uxx[1:-1, 1:-1].ravel(),
        uxy[1:-1, 1:-1].ravel(),
        uyy[1:-1, 1:-1].ravel(),
    )


def x_derivative(field: PlateField) -> PlateField:
    """Derivada centrada en x con fantasmas segun la etiqueta."""
    p = padded_values(field)
    return field.with_values((p[2:, 1:-1] - p[:-2, 1:-1]) / (2.0 * field.grid.hx))


# ---------------------------------------------------------------------------
# Operaciones de placa
# ---------------------------------------------------------------------------


def vk_bracket(u: PlateField, w: PlateField) -> PlateField:
    """Corchete de von Karman [u, w] = u_xx w_yy + u_yy w_xx - 2 u_xy w_xy."""
    grid = check_same_grid(u, w)
    uxx, uxy, uyy = second_derivatives(u)
    wxx, wxy, wyy = second_derivatives(w)
    values = uxx * wyy + uyy * wxx - 2.0 * (uxy * wxy)
    return PlateField(grid, values, "free")


def biharmonic_apply(u: PlateField) -> PlateField:
    """Delta^2 u con estencil de 13 puntos; usa solo los valores interiores."""
    ops = plate_operators(u.grid)
    return PlateField.from_interior(u.grid, ops.bending @ u.interior)


def laplacian(u: PlateField) -> PlateField:
    """Laplaciano de 5 puntos en todos los nodos con fantasmas empotrados."""
    ops = plate_operators(u.grid)
    return PlateField(u.grid, (ops.laplacian_full @ u.interior).reshape(u.grid.shape), "free")


def airy_solve(u1: PlateField, u2: PlateField) -> PlateField:
    """Funcion de Airy: Delta^2 v = -[u1, u2] en el interior, v = d_nu v = 0."""
    grid = check_same_grid(u1, u2)
    rhs = vk_bracket(u1, u2).values[1:-1, 1:-1].ravel()
    return PlateField.from_interior(grid, -bending_solver(grid).solve(rhs))


def airy_stress(u: PlateField) -> PlateField:
    """v(u) = airy_solve(u, u)."""
    return airy_solve(u, u)


def vk_force_parts(u: PlateField, F0: PlateField) -> tuple[PlateField, PlateField]:
    """Fuerza f(u) y funcion de Airy v(u) en una sola resolucion."""
    grid = check_same_grid(u, F0)
    ops = plate_operators(grid)
    curvatures = interior_curvatures(u)
    rhs = vk_bracket(u, u).values[1:-1, 1:-1].ravel()
    stress = -bending_solver(grid).solve(rhs)
    force = -ops.stress_adjoint(curvatures, stress + F0.interior)
    return PlateField.from_interior(grid, force), PlateField.from_interior(grid, stress)


def vk_force(u: PlateField, F0: PlateField) -> PlateField:
    """f(u) = -[u, v(u) + F0] en forma variacional discreta."""
    force, _ = vk_force_parts(u, F0)
    return force


def vk_potential(u: PlateField, F0: PlateField) -> float:
    """Pi(u) = 1/4 ||Delta v(u)||^2 - 1/2 <F0, [u, u]>."""
    stress = airy_stress(u)
    return 0.25 * h2_norm(stress) ** 2 - 0.5 * inner(F0, vk_bracket(u, u))


def inertia_solve(g: PlateField, alpha: float) -> PlateField:
    """Resuelve (1 - alpha Delta) w = g con w = 0 en la frontera."""
    if alpha < 0:
        raise ValueError(f"alpha debe ser >= 0 (recibido {alpha})")
    if alpha == 0:
        return g.with_values(g.values.copy())
    solver = _inertia_solver(g.grid, float(alpha), get_settings().linear_solver)
    return PlateField.from_interior(g.grid, solver.solve(g.interior))


# ---------------------------------------------------------------------------
# Normas y modos
# ---------------------------------------------------------------------------


def inner(a: PlateField, b: PlateField) -> float:
    """Producto interno trapezoidal <a, b>_h."""
    grid = check_same_grid(a, b)
    return float(grid.cell_area * np.sum(grid.weights * a.values * b.values))


def l2_norm(a: PlateField) -> float:
    return float(np.sqrt(max(inner(a, a), 0.0)))


def h2_norm(u: PlateField) -> float:
    """||Delta u||_h, norma equivalente en H^2_0."""
    return l2_norm(laplacian(u))


def dirichlet_gradient_norm(v: PlateField) -> float:
    """||grad v||_h via -<Delta v, v> con Laplaciano de Dirichlet."""
    ops = plate_operators(v.grid)
    value = -v.grid.cell_area * float(v.interior @ (ops.laplacian_dirichlet @ v.interior))
    return float(np.sqrt(max(value, 0.0)))


def bending_eigenpairs(grid: Grid, count: int = 1) -> tuple[np.ndarray, list[PlateField]]:
    """Modos mas bajos del biarmonico empotrado, normalizados a max|phi| = 1."""
    bending = plate_operators(grid).bending
    if count >= grid.n_interior - 1:
        values, vectors = np.linalg.eigh(bending.toarray())
        values, vectors = values[:count], vectors[:, :count]
    else:
        values, vectors = eigsh(bending, k=count, sigma=0.0, which="LM")
        order = np.argsort(values)
        values, vectors = values[order], vectors[:, order]

    modes = []
    for k in range(count):
        vec = vectors[:, k]
        vec = vec / vec[np.argmax(np.abs(vec))]
        modes.append(PlateField.from_interior(grid, vec))
    return values, modes


def sharp_regularity_ratio(u: PlateField) -> float:
    """max |segundas diferencias de v(u)| / ||u||^2_{H^2}."""
    norm = h2_norm(u)
    if norm == 0.0:
        return 0.0
    stress = airy_stress(u)
    peak = max(float(np.max(np.abs(d))) for d in second_derivatives(stress))
    return peak / norm**2
