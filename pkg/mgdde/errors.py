"""Exception hierarchy shared by the analysis modules and the command-line interface"""
from typing import Optional, Sequence


class ScenarioError(RuntimeError):
    """Base scenario (configuration) error"""


class GraphError(ScenarioError):
    """Communication graph validation error

    Attributes:
        code: one of ``self-loop``, ``zero-in-degree``, ``vertex-range`` or ``empty``"""
    def __init__(self, code: str, message: str):
        super().__init__(f'[{code}] {message}')
        self.code = code
        self.detail = message


class NumericalError(RuntimeError):
    """Base numerical failure"""


class NetworkError(NumericalError):
    """Singular or degenerate electrical network"""


class SingularityError(NumericalError):
    """Singular linearization coefficient (e.g. a zero voltage magnitude)"""


class DimensionError(NumericalError):
    """Mismatched matrix or vector dimensions"""


class ConvergenceError(NumericalError):
    """Newton iteration did not converge"""
    def __init__(self, message: str, iterations: int, residual: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class IntegrationError(NumericalError):
    """Time integration failure (step-size underflow, stiffness)"""
