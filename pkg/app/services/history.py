"""
Historial temporal de estados de la placa.

Guarda instantaneas (u, u_t) con paso uniforme, las curvaturas que consume el
kernel de retardo y la memoria de forzamiento del paso (Adams-Bashforth y balance
de energia). Cubre la ventana [t - t*, t] que necesita el cierre con retardo.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from app.errors import ConfigError, HistoryUnderflowError
from app.services.plate import Grid, PlateField, PlateState, h2_norm, second_derivatives

logger = logging.getLogger(__name__)


@dataclass
class Snapshot:
    """Instantanea del historial."""

    t: float
    u: np.ndarray
    v: np.ndarray
    curvature: np.ndarray  # (3, nx, ny): u_xx, u_xy, u_yy
    force: np.ndarray | None = None  # -f(u) + forzamiento explicito
    aero: np.ndarray | None = None  # forzamiento aerodinamico explicito (incluye p0)


def curvature_stack(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Curvaturas con fantasmas empotrados de un desplazamiento."""
    return np.stack(second_derivatives(PlateField(grid, u, "clamped")))


class HistoryBuffer:
    """Anillo de instantaneas con paso uniforme e interpolacion lineal en el tiempo."""

    def __init__(self, grid: Grid, dt: float, horizon: float = 0.0) -> None:
        if dt <= 0:
            raise ConfigError(f"dt debe ser positivo (recibido {dt})")
        if horizon < 0:
            raise ConfigError(f"El horizonte debe ser >= 0 (recibido {horizon})")
        self.grid = grid
        self.dt = float(dt)
        self.horizon = float(horizon)
        self._snapshots: list[Snapshot] = []
        # integral acumulada de k ||u_t||^2 hasta la ultima instantanea
        self.diss_cum = 0.0

    def __len__(self) -> int:
        return len(self._snapshots)

    @property
    def _tol(self) -> float:
        return 1e-9 * self.dt

    @property
    def t_start(self) -> float:
        return self._snapshots[0].t

    @property
    def t_end(self) -> float:
        return self._snapshots[-1].t

    @property
    def span(self) -> float:
        return self.t_end - self.t_start if self._snapshots else 0.0

    @property
    def times(self) -> np.ndarray:
        return np.array([snap.t for snap in self._snapshots])

    @property
    def latest(self) -> Snapshot:
        return self._snapshots[-1]

    def previous(self) -> Snapshot | None:
        """Instantanea anterior a la ultima, si existe."""
        return self._snapshots[-2] if len(self._snapshots) >= 2 else None

    def append(self, state: PlateState) -> Snapshot:
        """Agrega el estado actual; exige paso uniforme."""
        if state.grid != self.grid:
            raise ConfigError("El estado no corresponde a la malla del historial")
        if self._snapshots:
            expected = self.t_end + self.dt
            if abs(state.t - expected) > 1e-9 * max(1.0, abs(expected)):
                raise ConfigError(
                    f"Paso no uniforme en el historial: t={state.t}, esperado {expected}"
                )

        snapshot = Snapshot(
            t=state.t,
            u=state.u.values.copy(),
            v=state.v.values.copy(),
            curvature=curvature_stack(state.u.values, self.grid),
        )
        self._snapshots.append(snapshot)
        self.evict(state.t)
        return snapshot

    def record_forcing(self, force: np.ndarray, aero: np.ndarray) -> None:
        """Guarda el forzamiento evaluado en la ultima instantanea."""
        self.latest.force = force
        self.latest.aero = aero

    def evict(self, t: float) -> int:
        """Descarta instantaneas anteriores a t - t* - 2dt, conservando al menos dos."""
        cutoff = t - self.horizon - 2.0 * self.dt - self._tol
        drop = 0
        while drop < len(self._snapshots) - 2 and self._snapshots[drop].t < cutoff:
            drop += 1
        if drop:
            del self._snapshots[:drop]
        return drop

    def covers(self, t0: float, t1: float) -> bool:
        if not self._snapshots:
            return False
        return t0 >= self.t_start - self._tol and t1 <= self.t_end + self._tol

    def _locate(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Indice inferior y fraccion de interpolacion para cada instante."""
        times = np.asarray(times, dtype=float)
        if not self._snapshots or not self.covers(float(times.min()), float(times.max())):
            span = f"[{self.t_start}, {self.t_end}]" if self._snapshots else "vacio"
            raise HistoryUnderflowError(
                f"El historial {span} no cubre [{times.min()}, {times.max()}]"
            )
        if len(self._snapshots) == 1:
            return np.zeros(times.shape, dtype=int), np.zeros(times.shape)

        grid_times = self.times
        index = np.floor((times - self.t_start) / self.dt + 1e-9).astype(int)
        index = np.clip(index, 0, len(self._snapshots) - 2)
        frac = np.clip((times - grid_times[index]) / self.dt, 0.0, 1.0)
        return index, frac

    def sample(self, t: float) -> PlateState:
        """Estado interpolado linealmente en t."""
        (i,), (frac,) = self._locate(np.array([t]))
        lo = self._snapshots[i]
        if frac == 0.0:
            u, v = lo.u.copy(), lo.v.copy()
        else:
            hi = self._snapshots[i + 1]
            u = (1.0 - frac) * lo.u + frac * hi.u
            v = (1.0 - frac) * lo.v + frac * hi.v
        return PlateState(PlateField(self.grid, u), PlateField(self.grid, v), float(t))

    def sample_curvatures(self, times: np.ndarray) -> np.ndarray:
        """Curvaturas interpoladas, forma (len(times), 3, nx, ny)."""
        index, frac = self._locate(times)
        out = np.empty((len(index), 3, *self.grid.shape))
        last = len(self._snapshots) - 1
        for row, (i, w) in enumerate(zip(index, frac)):
            lo = self._snapshots[i].curvature
            if w == 0.0 or i >= last:
                out[row] = lo
            else:
                out[row] = (1.0 - w) * lo + w * self._snapshots[i + 1].curvature
        return out

    def h2_norms(self, t0: float, t1: float) -> tuple[np.ndarray, np.ndarray]:
        """Tiempos y ||Delta u||^2 de las instantaneas dentro de [t0, t1]."""
        times, values = [], []
        for snap in self._snapshots:
            if t0 - self._tol <= snap.t <= t1 + self._tol:
                times.append(snap.t)
                values.append(h2_norm(PlateField(self.grid, snap.u)) ** 2)
        return np.array(times), np.array(values)

    def copy(self) -> "HistoryBuffer":
        """Copia independiente (reanudacion bit a bit)."""
        clone = HistoryBuffer(self.grid, self.dt, self.horizon)
        clone._snapshots = [
            Snapshot(
                t=s.t,
                u=s.u.copy(),
                v=s.v.copy(),
                curvature=s.curvature.copy(),
                force=None if s.force is None else s.force.copy(),
                aero=None if s.aero is None else s.aero.copy(),
            )
            for s in self._snapshots
        ]
        clone.diss_cum = self.diss_cum
        return clone

    @classmethod
    def flat(cls, state: PlateState, dt: float, horizon: float = 0.0) -> "HistoryBuffer":
        """Prehistoria por extension constante: u(s) = u0, u_t(s) = u1 para s <= t0."""
        history = cls(state.grid, dt, horizon)
        count = math.ceil(horizon / dt - 1e-9) if horizon > 0 else 0
        for k in range(count, 0, -1):
            history._snapshots.append(
                Snapshot(
                    t=state.t - k * dt,
                    u=state.u.values.copy(),
                    v=state.v.values.copy(),
                    curvature=curvature_stack(state.u.values, state.grid),
                )
            )
        history._snapshots.append(
            Snapshot(
                t=state.t,
                u=state.u.values.copy(),
                v=state.v.values.copy(),
                curvature=curvature_stack(state.u.values, state.grid),
            )
        )
        return history

    @classmethod
    def from_npz(cls, path: Path, grid: Grid, horizon: float = 0.0) -> "HistoryBuffer":
        """Carga una prehistoria con arreglos times (n,), u y v (n, nx, ny) y diss_cum opcional."""
        try:
            data = np.load(path)
            times, u, v = data["times"], data["u"], data["v"]
        except (OSError, KeyError) as e:
            raise ConfigError(f"No se pudo leer la prehistoria {path}: {e}") from e
        diss_cum = float(data["diss_cum"]) if "diss_cum" in data.files else 0.0

        if u.shape != (len(times), *grid.shape) or v.shape != u.shape:
            raise ConfigError(f"Forma de prehistoria {u.shape} incompatible con {grid.shape}")
        if len(times) < 2:
            raise ConfigError("La prehistoria necesita al menos dos instantaneas")
        steps = np.diff(times)
        dt = float(steps[0])
        if dt <= 0 or not np.allclose(steps, dt, rtol=1e-9, atol=0.0):
            raise ConfigError("La prehistoria debe tener paso uniforme creciente")

        history = cls(grid, dt, horizon)
        history.diss_cum = diss_cum
        for t, ui, vi in zip(times, u, v):
            history._snapshots.append(
                Snapshot(
                    t=float(t),
                    u=np.array(ui, dtype=float),
                    v=np.array(vi, dtype=float),
                    curvature=curvature_stack(np.asarray(ui, dtype=float), grid),
                )
            )
        logger.info(f"Prehistoria cargada: {len(times)} instantaneas desde {path}")
        return history

    def to_npz(self, path: Path) -> None:
        np.savez(
            path,
            times=self.times,
            u=np.stack([s.u for s in self._snapshots]),
            v=np.stack([s.v for s in self._snapshots]),
            diss_cum=self.diss_cum,
        )
