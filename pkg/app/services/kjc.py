"""
Analisis numerico de la condicion de Kutta-Joukowsky.

Simbolos de Fourier-Laplace del problema de flujo (D, m, D1, r), transformada de
Hilbert finita sobre I = (-1, 1) con su inversion en L_p (p < 2), y el mapa
downwash -> potencial aeroelastico en el caso unidimensional.

Convenciones:
    - Transformada espacial f^(eta) = int f e^{-i eta x}, temporal de Laplace con
      tau = sigma + i beta; d_t <-> tau, d_x <-> i eta.
    - Raiz cuadrada principal (corte en el semieje real negativo).
    - H_f w(x) = (1/pi) p.v. int_I w(t) / (t - x) dt, con simbolo i sign(eta) en la recta.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Literal

import numpy as np
import polars as pl
import scipy.linalg as la
from joblib import Parallel, delayed
from numpy.polynomial import chebyshev as cheb
from numpy.polynomial import legendre
from scipy.fft import dct
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import LinearOperator, gmres
from scipy.special import eval_chebyu

from app.config import get_settings
from app.errors import DomainError, FrequencyResolutionError, SingularPointError

logger = logging.getLogger(__name__)

NodeKind = Literal["chebyshev", "uniform"]
EndpointTag = Literal["bounded", "singular"]

# Grado maximo del ajuste polinomial sobre nodos uniformes
UNIFORM_FIT_DEGREE = 32

# Semiancho de la caja periodica que contiene al intervalo en el mapa de downwash
BOX_HALF_WIDTH = 4.0


# ---------------------------------------------------------------------------
# Simbolos
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymbolPoint:
    """Punto (eta_x, eta_y, tau) de evaluacion de simbolos."""

    eta_x: float
    eta_y: float
    tau: complex
    U: float

    @property
    def alpha_lp(self) -> float:
        """Parte real de tau (el alfa de los simbolos unidimensionales)."""
        return float(np.real(self.tau))

    def scaled(self, lam: float) -> "SymbolPoint":
        return SymbolPoint(lam * self.eta_x, lam * self.eta_y, lam * self.tau, self.U)


def _symbol_D(eta_x, eta_y, tau, U):
    return tau**2 + 2j * U * eta_x * tau + (1.0 - U**2) * eta_x**2 + eta_y**2


def _multiplier(eta_x, eta_y, tau, U):
    return -np.sqrt(_symbol_D(eta_x, eta_y, tau, U)) / (tau + 1j * U * eta_x)


def symbol_D(pt: SymbolPoint) -> complex:
    """D = tau^2 + 2 U i eta_x tau + (1 - U^2) eta_x^2 + eta_y^2."""
    return complex(_symbol_D(pt.eta_x, pt.eta_y, complex(pt.tau), pt.U))


def multiplier_m(pt: SymbolPoint) -> complex:
    """m = -sqrt(D) / (tau + i U eta_x)."""
    denominator = complex(pt.tau) + 1j * pt.U * pt.eta_x
    if denominator == 0:
        raise SingularPointError(f"tau + i U eta_x = 0 en {pt}")
    return complex(-np.sqrt(complex(symbol_D(pt))) / denominator)


def r_symbol(z: float, eta: float, alpha_lp: float, U: float) -> complex:
    """
    r(z, eta) = sqrt(D1) / (z_U - i alpha/eta), con z_U = z + U y
    D1 = -alpha^2/eta^2 - 1 + z_U^2 - 2 i (alpha/eta) z_U.
    """
    if eta == 0:
        raise DomainError("r_symbol requiere eta != 0")
    a = alpha_lp / eta
    z_u = z + U
    denominator = complex(z_u, -a)
    if denominator == 0:
        raise SingularPointError(f"z_U - i alpha/eta = 0 en z={z}, eta={eta}")
    d1 = complex(-(a * a) - 1.0 + z_u * z_u, -2.0 * a * z_u)
    return complex(np.sqrt(d1) / denominator)


def r_limits(U: float) -> dict[str, complex]:
    """Limites de r: z -> +inf, z -> -inf, y z = 0 con eta -> inf."""
    if U == 0:
        raise DomainError("El limite en z = 0 no existe para U = 0")
    zero = complex(np.sqrt(complex(U**2 - 1.0, -0.0)) / U)
    return {"plus_infinity": 1.0 + 0j, "minus_infinity": -1.0 + 0j, "zero": zero}


# ---------------------------------------------------------------------------
# Funciones sobre el intervalo
# ---------------------------------------------------------------------------


def chebyshev_nodes(n: int) -> np.ndarray:
    """Nodos de Chebyshev de primera especie en orden creciente."""
    j = np.arange(n)
    return -np.cos((2 * j + 1) * np.pi / (2 * n))


def uniform_nodes(n: int) -> np.ndarray:
    """Nodos centrados en celdas uniformes de I."""
    return -1.0 + (2 * np.arange(n) + 1) / n


@dataclass
class IntervalFunction:
    """
    Muestras de una funcion sobre I = (-1, 1).

    Con tag="singular" se guarda g y la funcion representada es g / sqrt(1 - x^2).
    """

    nodes: np.ndarray
    values: np.ndarray
    kind: NodeKind = "chebyshev"
    tag: EndpointTag = "bounded"

    def __post_init__(self) -> None:
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.values = np.asarray(self.values)
        if self.nodes.shape != self.values.shape or self.nodes.ndim != 1:
            raise DomainError("Nodos y valores deben ser vectores de igual longitud")
        if len(self.nodes) < 4:
            raise DomainError("Se necesitan al menos 4 nodos")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("La funcion contiene valores no finitos")

    @classmethod
    def sample(
        cls,
        fn: Callable[[np.ndarray], np.ndarray],
        n: int,
        kind: NodeKind = "chebyshev",
        tag: EndpointTag = "bounded",
    ) -> "IntervalFunction":
        """Muestrea fn en n nodos; con tag singular fn da g."""
        nodes = chebyshev_nodes(n) if kind == "chebyshev" else uniform_nodes(n)
        return cls(nodes, np.asarray(fn(nodes)), kind, tag)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def with_values(
        self, values: np.ndarray, tag: EndpointTag | None = None
    ) -> "IntervalFunction":
        return IntervalFunction(self.nodes, values, self.kind, tag or self.tag)

    def weighted_values(self) -> np.ndarray:
        """Valores de la funcion representada en los nodos."""
        if self.tag == "singular":
            return self.values / np.sqrt(1.0 - self.nodes**2)
        return self.values

    def coefficients(self) -> np.ndarray:
        """Coeficientes de Chebyshev T de las muestras guardadas."""
        if self.kind == "chebyshev":
            b = dct(self.values[::-1], type=2) / self.n
            b[0] *= 0.5
            return b
        degree = min(self.n - 1, UNIFORM_FIT_DEGREE)
        return cheb.chebfit(self.nodes, self.values, degree)

    def _interpolate(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "chebyshev":
            return cheb.chebval(x, self.coefficients())
        return CubicSpline(self.nodes, self.values)(x)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Funcion representada en puntos arbitrarios de I."""
        x = np.asarray(x, dtype=float)
        values = self._interpolate(x)
        if self.tag == "singular":
            return values / np.sqrt(1.0 - x**2)
        return values

    def with_homogeneous(self, c: float) -> "IntervalFunction":
        """Suma c / sqrt(1 - x^2); el resultado queda con tag singular."""
        if self.tag == "singular":
            return self.with_values(self.values + c)
        return self.with_values(self.values * np.sqrt(1.0 - self.nodes**2) + c, "singular")


def homogeneous_coefficient(w: IntervalFunction) -> float:
    """(1/pi) int_I w: coeficiente de la solucion homogenea c / sqrt(1 - x^2)."""
    if w.tag == "singular":
        return float(np.real(w.coefficients()[0]))
    tq, wq = legendre.leggauss(2 * w.n)
    return float(np.real(np.sum(wq * w.evaluate(tq))) / np.pi)


# ---------------------------------------------------------------------------
# Transformada de Hilbert finita
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _gauss_legendre(m: int) -> tuple[np.ndarray, np.ndarray]:
    return legendre.leggauss(m)


def finite_hilbert_evaluate(w: IntervalFunction, x: np.ndarray) -> np.ndarray:
    """
    (1/pi) p.v. int_I w(t)/(t - x) dt en puntos interiores x.

    Tag singular: forma cerrada T_k/sqrt(1-t^2) -> U_{k-1}.
    Tag bounded: sustraccion de la singularidad sobre el interpolante,
        H(x) = (1/pi) [int (w(t) - w(x))/(t - x) dt + w(x) log((1 - x)/(1 + x))].
    """
    x = np.asarray(x, dtype=float)
    if w.tag == "singular":
        b = w.coefficients()
        if len(b) < 2:
            return np.zeros_like(x)
        orders = np.arange(len(b) - 1)[:, None]
        return b[1:] @ eval_chebyu(orders, x[None, :])

    m = w.n + (w.n % 2) if w.kind == "chebyshev" else 2 * w.n
    tq, wq = _gauss_legendre(m)
    kernel = wq[None, :] / (tq[None, :] - x[:, None])
    at_x = w.evaluate(x)
    regular = kernel @ w.evaluate(tq) - kernel.sum(axis=1) * at_x
    return (regular + at_x * np.log((1.0 - x) / (1.0 + x))) / np.pi


def finite_hilbert(w: IntervalFunction) -> IntervalFunction:
    """H_f w en los nodos de w (tag bounded)."""
    return IntervalFunction(w.nodes, finite_hilbert_evaluate(w, w.nodes), w.kind, "bounded")


def finite_hilbert_invert(
    h: IntervalFunction, p: float = 1.5, kutta: bool = False
) -> IntervalFunction:
    """
    Solucion particular de H_f w = h en L_p, 1 < p < 2.

    Se ajusta h = sum c_k U_k y se toma w = sum_{k>=1} c_{k-1} T_k / sqrt(1 - x^2), es
    decir la representante con constante homogenea nula. Con kutta=True la constante
    se fija para que w quede finita en el borde de salida x = 1.
    """
    if not 1.0 < p < 2.0:
        raise DomainError(f"La inversion solo esta definida para 1 < p < 2 (recibido p={p})")
    if h.tag != "bounded":
        raise DomainError("La inversion espera una funcion acotada")

    if h.kind == "chebyshev":
        vandermonde = eval_chebyu(np.arange(h.n)[None, :], h.nodes[:, None])
        c = la.solve(vandermonde, h.values)
    else:
        degree = min(h.n - 1, UNIFORM_FIT_DEGREE)
        vandermonde = eval_chebyu(np.arange(degree + 1)[None, :], h.nodes[:, None])
        c, *_ = la.lstsq(vandermonde, h.values)

    b = np.zeros(len(c) + 1, dtype=np.result_type(c, float))
    b[1:] = c
    w = IntervalFunction(h.nodes, cheb.chebval(h.nodes, b), h.kind, "singular")
    if kutta:
        return w.with_homogeneous(-np.sum(b[1:]))
    return w


# ---------------------------------------------------------------------------
# Mapa downwash -> potencial
# ---------------------------------------------------------------------------


@dataclass
class IntervalSeries:
    """Serie temporal uniforme de muestras (nt, n) sobre nodos uniformes de I."""

    dt: float
    values: np.ndarray
    t0: float = 0.0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DomainError("La serie debe tener forma (nt, n)")
        if self.values.shape[1] % 2:
            raise DomainError("El numero de nodos espaciales debe ser par")
        if self.dt <= 0:
            raise DomainError("dt debe ser positivo")

    @classmethod
    def from_function(
        cls, fn: Callable[[np.ndarray, np.ndarray], np.ndarray], nt: int, dt: float, n: int
    ) -> "IntervalSeries":
        t = dt * np.arange(nt)
        T, X = np.meshgrid(t, uniform_nodes(n), indexing="ij")
        return cls(dt, fn(T, X))

    @property
    def nodes(self) -> np.ndarray:
        return uniform_nodes(self.values.shape[1])

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.shape[0])

    def frame(self, k: int) -> IntervalFunction:
        return IntervalFunction(self.nodes, self.values[k], "uniform", "bounded")


class _LineEmbedding:
    """Caja periodica [-L, L] que contiene a I con la misma malla uniforme."""

    def __init__(self, n: int, half_width: float = BOX_HALF_WIDTH) -> None:
        self.n = n
        dx = 2.0 / n
        self.size = int(round(2.0 * half_width / dx))
        self.offset = int(round((half_width - 1.0) / dx))
        self.eta = 2.0 * np.pi * np.fft.fftfreq(self.size, dx)

    def apply(self, symbol: np.ndarray, vec: np.ndarray) -> np.ndarray:
        """R F^{-1} diag(symbol) F E vec."""
        full = np.zeros(self.size, dtype=complex)
        full[self.offset : self.offset + self.n] = vec
        out = np.fft.ifft(symbol * np.fft.fft(full))
        return out[self.offset : self.offset + self.n]


def _time_spectrum(series: IntervalSeries, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Transformada de Fourier amortiguada en el tiempo y los tau correspondientes."""
    damping = np.exp(-sigma * (series.times - series.t0))
    spectrum = np.fft.fft(series.values * damping[:, None], axis=0)
    beta = 2.0 * np.pi * np.fft.fftfreq(series.values.shape[0], series.dt)
    return spectrum, sigma + 1j * beta


def _from_spectrum(spectrum: np.ndarray, series: IntervalSeries, sigma: float) -> IntervalSeries:
    damping = np.exp(sigma * (series.times - series.t0))
    values = np.fft.ifft(spectrum, axis=0).real * damping[:, None]
    return IntervalSeries(series.dt, values, series.t0)


def _check_flow(U: float, alpha_lp: float, subsonic: bool) -> None:
    if not alpha_lp > 0:
        raise DomainError(f"alpha_lp debe ser positivo (recibido {alpha_lp})")
    if U < 0 or U == 1.0:
        raise DomainError(f"U invalido: {U}")
    if subsonic and not U < 1.0:
        raise DomainError(f"La inversion del downwash requiere U < 1 (recibido {U})")


def potential_to_downwash(psi: IntervalSeries, U: float, alpha_lp: float) -> IntervalSeries:
    """h = P_I T psi con (T psi)^ = m psi^ (mapa directo)."""
    _check_flow(U, alpha_lp, subsonic=False)
    line = _LineEmbedding(psi.values.shape[1])
    spectrum, taus = _time_spectrum(psi, alpha_lp)
    out = np.empty_like(spectrum)
    for k, tau in enumerate(taus):
        out[k] = line.apply(_multiplier(line.eta, 0.0, tau, U), spectrum[k])
    return _from_spectrum(out, psi, alpha_lp)


def _splitting_guess(
    line: _LineEmbedding, symbol: np.ndarray, rhs: np.ndarray, U: float
) -> np.ndarray:
    """
    Arranque por separacion m = m0 r con m0 = i kappa sign(eta), kappa = sqrt(1-U^2)/U.

    r se invierte espectralmente y la parte de Hilbert con finite_hilbert_invert.
    """
    kappa = math.sqrt(1.0 - U**2) / U
    sign = np.where(line.eta >= 0, 1.0, -1.0)
    elliptic = symbol / (1j * kappa * sign)
    reduced = line.apply(1.0 / elliptic, rhs) / kappa
    nodes = uniform_nodes(line.n)
    guess = np.zeros(line.n, dtype=complex)
    for part, unit in ((reduced.real, 1.0), (reduced.imag, 1j)):
        inverse = finite_hilbert_invert(IntervalFunction(nodes, part, "uniform", "bounded"))
        guess += unit * inverse.weighted_values()
    return guess


def _solve_frequency(
    line: _LineEmbedding, tau: complex, rhs: np.ndarray, U: float, rtol: float
) -> np.ndarray:
    if not np.any(rhs):
        return np.zeros(line.n, dtype=complex)

    symbol = _multiplier(line.eta, 0.0, tau, U)
    n = line.n
    operator = LinearOperator((n, n), matvec=lambda v: line.apply(symbol, v), dtype=complex)
    preconditioner = LinearOperator(
        (n, n), matvec=lambda v: line.apply(1.0 / symbol, v), dtype=complex
    )
    x0 = _splitting_guess(line, symbol, rhs, U) if U > 0 else preconditioner.matvec(rhs)

    solution, info = gmres(
        operator, rhs, x0=x0, rtol=rtol, atol=0.0, restart=n, maxiter=4, M=preconditioner
    )
    residual = np.linalg.norm(operator.matvec(solution) - rhs) / np.linalg.norm(rhs)
    if info != 0 or not residual <= max(1e-6, 100.0 * rtol):
        raise FrequencyResolutionError(
            f"GMRES no convergio en tau={tau:.4g} (info={info})", float(residual)
        )
    return solution


def downwash_to_potential(
    h: IntervalSeries,
    U: float,
    alpha_lp: float,
    rtol: float = 1e-10,
    n_jobs: int | None = None,
) -> IntervalSeries:
    """
    Potencial aeroelastico psi sobre I con P_I T psi = h.

    Transformada amortiguada en el tiempo (sigma = alpha_lp) y, por frecuencia, GMRES
    sobre R F^{-1} diag(m) F E con precondicionador 1/m en la recta.
    """
    _check_flow(U, alpha_lp, subsonic=True)
    line = _LineEmbedding(h.values.shape[1])
    spectrum, taus = _time_spectrum(h, alpha_lp)
    n_jobs = n_jobs or get_settings().threads

    solutions = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_solve_frequency)(line, tau, spectrum[k], U, rtol) for k, tau in enumerate(taus)
    )
    logger.info(f"Downwash invertido en {len(taus)} frecuencias ({line.n} nodos)")
    return _from_spectrum(np.array(solutions), h, alpha_lp)


def duality_pairing(
    psi: IntervalSeries, ux: Callable[[np.ndarray, np.ndarray], np.ndarray]
) -> float:
    """int_0^T int_I psi u_x con trapecio en el tiempo y regla del punto medio en x."""
    T, X = np.meshgrid(psi.times, psi.nodes, indexing="ij")
    spatial = np.sum(psi.values * ux(T, X), axis=1) * (2.0 / psi.values.shape[1])
    return float(trapezoid(spatial, psi.times))


# ---------------------------------------------------------------------------
# Tablas de sondeo
# ---------------------------------------------------------------------------


def r_strip_table(
    alpha_lp: float = 1.0,
    U: float = 0.5,
    z_u_values: np.ndarray | None = None,
    etas: np.ndarray | None = None,
) -> pl.DataFrame:
    """|r sqrt(eta)| sobre la franja caracteristica z_U en [0.99, 1.01]."""
    z_u_values = np.linspace(0.99, 1.01, 21) if z_u_values is None else z_u_values
    etas = np.logspace(2, 6, 9) if etas is None else etas
    rows = [
        {
            "z_u": float(z_u),
            "eta": float(eta),
            "abs_r_sqrt_eta": abs(r_symbol(z_u - U, eta, alpha_lp, U)) * math.sqrt(eta),
        }
        for z_u in z_u_values
        for eta in etas
    ]
    return pl.DataFrame(rows)


def homogeneity_table(n_points: int = 1000, seed: int = 0) -> pl.DataFrame:
    """Defecto relativo de m(lambda eta, lambda tau) = m(eta, tau) en puntos aleatorios."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_points):
        pt = SymbolPoint(
            eta_x=float(rng.normal()),
            eta_y=float(rng.normal()),
            tau=complex(rng.uniform(0.1, 2.0), rng.normal()),
            U=float(rng.uniform(0.0, 0.95)),
        )
        lam = float(2.0 ** rng.integers(-8, 9))
        base = multiplier_m(pt)
        rows.append(
            {
                "eta_x": pt.eta_x,
                "eta_y": pt.eta_y,
                "tau_re": pt.tau.real,
                "tau_im": pt.tau.imag,
                "U": pt.U,
                "lambda": lam,
                "defect": abs(multiplier_m(pt.scaled(lam)) - base) / abs(base),
            }
        )
    return pl.DataFrame(rows)


def random_smooth_function(
    rng: np.random.Generator, terms: int = 6
) -> Callable[[np.ndarray], np.ndarray]:
    """Suma de pocos modos trigonometricos de baja frecuencia."""
    amplitudes = rng.normal(size=terms)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=terms)
    return lambda x: sum(
        a * np.cos(0.5 * np.pi * k * x + ph) for k, (a, ph) in enumerate(zip(amplitudes, phases))
    )


def hilbert_round_trip_table(
    node_counts: tuple[int, ...] = (32, 64, 128, 256),
    n_functions: int = 10,
    seed: int = 0,
    interior: float = 0.9,
) -> pl.DataFrame:
    """Residuo interior de H_f(H_f^{-1} h) - h y aniquilacion del modo homogeneo."""
    rng = np.random.default_rng(seed)
    functions = [random_smooth_function(rng) for _ in range(n_functions)]
    rows = []
    for n in node_counts:
        residual = 0.0
        for fn in functions:
            h = IntervalFunction.sample(fn, n)
            back = finite_hilbert(finite_hilbert_invert(h))
            mask = np.abs(h.nodes) <= interior
            residual = max(residual, float(np.max(np.abs(back.values - h.values)[mask])))
        homogeneous = IntervalFunction.sample(np.ones_like, n, tag="singular")
        annihilation = float(np.max(np.abs(finite_hilbert(homogeneous).values)))
        rows.append(
            {"nodes": n, "max_interior_residual": residual, "homogeneous_image": annihilation}
        )
    return pl.DataFrame(rows)


def manufactured_potential(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """psi*(t, x) = sin^2(pi t / 4) (1 - x^2)^2 cos x: suave y nulo con su derivada en +-1."""
    return np.sin(np.pi * t / 4.0) ** 2 * (1.0 - x**2) ** 2 * np.cos(x)


def _pairing_slope(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """u_x de prueba soportado en I."""
    return np.exp(-t) * (1.0 - x**2) ** 2


def duality_table(
    U: float,
    alpha_lp: float,
    node_counts: tuple[int, ...] = (16, 32, 64),
    steps: int = 16,
    n_jobs: int | None = None,
) -> pl.DataFrame:
    """<u_x, psi> del potencial recuperado desde su downwash, por resolucion."""
    dt = 4.0 / steps
    rows = []
    for n in node_counts:
        series = IntervalSeries.from_function(manufactured_potential, steps, dt, n)
        downwash = potential_to_downwash(series, U, alpha_lp)
        recovered = downwash_to_potential(downwash, U, alpha_lp, n_jobs=n_jobs)
        rows.append(
            {
                "nodes": n,
                "steps": steps,
                "pairing": duality_pairing(recovered, _pairing_slope),
                "exact_pairing": duality_pairing(series, _pairing_slope),
            }
        )
    return pl.DataFrame(rows)
