"""
Errores del laboratorio y sus codigos de salida.

Codigos de salida del proceso:
    0  ejecucion correcta
    1  autoverificacion fallida
    2  error de configuracion o de dominio
    3  divergencia numerica
    4  fallo de un solver
"""


class LabError(Exception):
    """Error base del laboratorio."""

    exit_code = 1


class ConfigError(LabError):
    """Configuracion invalida."""

    exit_code = 2


class DimensionError(LabError):
    """Mallas incompatibles o malla invalida."""

    exit_code = 2


class DomainError(LabError):
    """Argumento fuera del dominio matematico de la operacion."""

    exit_code = 2


class DegenerateSpeedError(DomainError):
    """Velocidad transonica U = 1."""


class SingularPointError(DomainError):
    """Denominador nulo en un simbolo."""


class DivergenceError(LabError):
    """Aparicion de NaN o Inf durante la integracion."""

    exit_code = 3

    def __init__(self, step: int, message: str | None = None) -> None:
        self.step = step
        super().__init__(message or f"Divergencia numerica en el paso {step}")


class SolverError(LabError):
    """Fallo de un solver lineal."""

    exit_code = 4

    def __init__(self, message: str, residual: float | None = None) -> None:
        self.residual = residual
        if residual is not None:
            message = f"{message} (residuo relativo {residual:.3e})"
        super().__init__(message)


class NonConvergenceError(SolverError):
    """Newton agoto sus iteraciones."""


class NearBifurcationError(SolverError):
    """Jacobiano de Newton singular."""


class HistoryUnderflowError(LabError):
    """El historial no cubre la ventana de retardo."""

    exit_code = 4


class FrequencyResolutionError(SolverError):
    """La iteracion por frecuencia no convergio."""
