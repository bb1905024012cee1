"""
Esquemas Pydantic para la configuracion de escenarios y la API.
"""

from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Closure = Literal["piston_classical", "piston_lowfreq", "delayed", "in_vacuo"]
LoadShape = Literal["zero", "uniform", "bump", "uniaxial", "biaxial", "shear"]
InitialShape = Literal["zero", "mode", "bump", "random", "file"]
SweepParameter = Literal["load", "U", "pressure"]
CheckStatus = Literal["pass", "fail", "report"]


class Section(BaseModel):
    """Seccion de configuracion: rechaza claves desconocidas."""

    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# Secciones del escenario
# ---------------------------------------------------------------------------


class GridSpec(Section):
    """Malla de nodos sobre [0, lx] x [0, ly]."""

    nx: int = Field(default=17, ge=5, description="Nodos en x")
    ny: int = Field(default=17, ge=5, description="Nodos en y")
    lx: float = Field(default=1.0, gt=0, description="Longitud en x (direccion del flujo)")
    ly: float = Field(default=1.0, gt=0, description="Longitud en y")


class ModelSpec(Section):
    """Parametros fisicos de la placa y del flujo."""

    U: float = Field(..., ge=0, description="Velocidad del flujo")
    k: float = Field(default=0.0, ge=0, description="Amortiguamiento estructural")
    alpha: float = Field(default=0.0, ge=0, description="Inercia rotacional")
    closure: Closure = Field(default="piston_classical", description="Cierre aerodinamico")
    nonlinear: bool = Field(default=True, description="Incluye la fuerza de von Karman")

    @model_validator(mode="after")
    def check_speed(self) -> "ModelSpec":
        if self.U == 1.0:
            raise ValueError("U = 1 (transonico) no esta permitido")
        if self.closure == "piston_lowfreq" and self.U <= 1.0:
            raise ValueError(f"piston_lowfreq requiere U > 1 (recibido {self.U})")
        return self


class LoadSpec(Section):
    """Campo de carga con nombre escalado por una amplitud."""

    shape: LoadShape = "zero"
    amplitude: float = 0.0


class TimeSpec(Section):
    dt: float | None = Field(default=None, gt=0, description="Paso; por defecto 0.25 h^2")
    T: float = Field(default=10.0, gt=0, description="Instante final absoluto")
    stride: int = Field(default=10, ge=1, description="Paso de muestreo de instantaneas")


class InitialSpec(Section):
    """Dato inicial (u0, u1)."""

    shape: InitialShape = "mode"
    amplitude: float = 1e-2
    mode: int = Field(default=1, ge=1, description="Modo de flexion (1 = fundamental)")
    velocity: float = Field(default=0.0, description="Amplitud de u1 sobre la misma forma")
    seed: int | None = None
    path: Path | None = Field(default=None, description="Archivo .npz con arreglos u y v")

    @model_validator(mode="after")
    def check_path(self) -> "InitialSpec":
        if self.shape == "file" and self.path is None:
            raise ValueError("shape = 'file' requiere path")
        return self


class PrehistorySpec(Section):
    kind: Literal["flat", "file"] = "flat"
    path: Path | None = None

    @model_validator(mode="after")
    def check_path(self) -> "PrehistorySpec":
        if self.kind == "file" and self.path is None:
            raise ValueError("kind = 'file' requiere path")
        return self


class DelaySpec(Section):
    """Cuadratura del potencial con retardo; None usa la regla por defecto."""

    n_theta: int | None = Field(default=None, ge=8)
    n_s: int | None = Field(default=None, ge=4)


class OutputSpec(Section):
    dir: Path | None = Field(default=None, description="Directorio de salida")
    snapshots: bool = Field(default=False, description="Escribe snapshots.bin")


class SweepSpec(Section):
    """Barrido de continuacion."""

    parameter: SweepParameter = "load"
    start: float = 0.0
    stop: float = 1.0
    count: int = Field(default=11, ge=2)
    values: list[float] | None = None
    relative_to_critical: bool = Field(
        default=False, description="Valores de carga como multiplos de la carga critica"
    )
    include_delay: bool = False

    def grid_values(self) -> list[float]:
        if self.values is not None:
            return list(self.values)
        step = (self.stop - self.start) / (self.count - 1)
        return [self.start + i * step for i in range(self.count)]


class CompareSpec(Section):
    U_values: list[float] = Field(default_factory=lambda: [2.0, 4.0, 8.0])
    identity_check: bool = Field(
        default=False, description="Fila extra del piston clasico contra si mismo (distancia 0)"
    )

    @field_validator("U_values")
    @classmethod
    def check_supersonic(cls, values: list[float]) -> list[float]:
        if not values or any(u <= 1.0 for u in values):
            raise ValueError("La comparacion de cierres usa U > 1")
        return sorted(values)


class KjcSpec(Section):
    """Sondeo de simbolos y de la transformada de Hilbert finita."""

    alpha_lp: float = Field(default=1.0, gt=0)
    U: float = Field(default=0.5, ge=0)
    n_points: int = Field(default=1000, ge=1)
    node_counts: list[int] = Field(default_factory=lambda: [32, 64, 128, 256])
    n_functions: int = Field(default=10, ge=1)
    limit_z: float = Field(default=1e6, gt=0)
    downwash_nodes: int = Field(default=32, ge=4)
    downwash_steps: int = Field(default=32, ge=4)
    duality_nodes: list[int] = Field(default_factory=lambda: [16, 32, 64])

    @field_validator("U")
    @classmethod
    def check_speed(cls, value: float) -> float:
        if value == 1.0:
            raise ValueError("U = 1 (transonico) no esta permitido")
        return value

    @field_validator("downwash_nodes")
    @classmethod
    def check_even(cls, value: int) -> int:
        if value % 2:
            raise ValueError("downwash_nodes debe ser par")
        return value

    @field_validator("duality_nodes")
    @classmethod
    def check_duality_nodes(cls, value: list[int]) -> list[int]:
        if not value or any(n < 4 or n % 2 for n in value):
            raise ValueError("duality_nodes necesita conteos pares >= 4")
        return value


class ExpectSpec(Section):
    """Verificaciones opcionales de una corrida; cada una aparece en el manifiesto."""

    final_ut_norm_max: float | None = None
    window: float = Field(default=10.0, gt=0)
    window_dissipation_max: float | None = None
    growth_factor_min: float | None = None
    decay_factor_min: float | None = None
    equilibrium_distance_max: float | None = None
    report_lco_drift: bool = False


class ScenarioConfig(Section):
    """Escenario completo tal como se lee del archivo TOML."""

    name: str = "scenario"
    description: str = ""
    grid: GridSpec = Field(default_factory=GridSpec)
    model: ModelSpec
    p0: LoadSpec = Field(default_factory=LoadSpec)
    f0: LoadSpec = Field(default_factory=LoadSpec)
    time: TimeSpec = Field(default_factory=TimeSpec)
    initial: InitialSpec = Field(default_factory=InitialSpec)
    prehistory: PrehistorySpec = Field(default_factory=PrehistorySpec)
    delay: DelaySpec = Field(default_factory=DelaySpec)
    output: OutputSpec = Field(default_factory=OutputSpec)
    sweep: SweepSpec | None = None
    compare: CompareSpec | None = None
    kjc: KjcSpec | None = None
    expect: ExpectSpec = Field(default_factory=ExpectSpec)


# ---------------------------------------------------------------------------
# Manifiesto
# ---------------------------------------------------------------------------


class CheckOutcome(BaseModel):
    """Resultado de una verificacion de aceptacion."""

    name: str
    status: CheckStatus
    value: float | None = None
    threshold: float | None = None
    detail: str = ""


class RunManifest(BaseModel):
    """Manifiesto que acompana a cada conjunto de salidas."""

    command: str
    name: str
    version: str
    config: dict[str, Any]
    settings: dict[str, Any]
    tolerances: dict[str, float]
    outputs: list[str] = Field(default_factory=list)
    checks: list[CheckOutcome] = Field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks)


# ---------------------------------------------------------------------------
# API
# ---------------------------------------------------------------------------


class TrajectorySample(BaseModel):
    t: float
    h2_norm: float
    ut_norm: float
    e_pl: float
    diss_cum: float
    balance_residual: float


class SimulationResponse(BaseModel):
    """Resumen de una corrida temporal."""

    name: str
    steps: int = Field(..., description="Pasos de tiempo")
    dt: float
    final_time: float
    final_h2_norm: float
    final_ut_norm: float
    cumulative_balance: float = Field(..., description="Suma de |balance_residual|")
    dissipation: float = Field(..., description="Integral de k ||u_t||^2")
    lco_drift: float | None = Field(default=None, description="Deriva de amplitud por periodo")
    samples: list[TrajectorySample] = Field(default_factory=list)
    checks: list[CheckOutcome] = Field(default_factory=list)


class BranchPointResponse(BaseModel):
    value: float
    h2_norm: float
    residual: float
    iterations: int
    stability: float | None
    trivial_stability: float | None


class EquilibriaResponse(BaseModel):
    parameter: SweepParameter
    points: list[BranchPointResponse]
    failures: int
    onset: float | None = Field(default=None, description="Perdida de estabilidad trivial")
    first_nontrivial: float | None = None
    critical_load: float | None = Field(default=None, description="Carga critica lineal")


class ComplexValue(BaseModel):
    re: float
    im: float


class HilbertRow(BaseModel):
    nodes: int
    max_interior_residual: float
    homogeneous_image: float


class KjcProbeResponse(BaseModel):
    homogeneity_max_defect: float
    r_strip_min: float
    r_strip_max: float
    r_limits: dict[str, ComplexValue]
    hilbert_round_trip: list[HilbertRow]


class ClosureDistance(BaseModel):
    U: float
    baseline: Closure = "piston_classical"
    target: Closure = "delayed"
    t_star: float
    sup_distance: float
    terminal_distance: float


class CompareClosuresResponse(BaseModel):
    rows: list[ClosureDistance]
    monotone: bool = Field(..., description="Distancia no creciente en U (se reporta)")


class DelayHorizonResponse(BaseModel):
    U: float
    lx: float
    ly: float
    nx: int
    ny: int
    t_star: float


class ErrorResponse(BaseModel):
    """Respuesta de error."""

    detail: str = Field(..., description="Mensaje de error")
