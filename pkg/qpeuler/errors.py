"""
Exception hierarchy for qpeuler.

Every failure family the library can raise has its own class so the CLI can
map it onto an exit code without parsing messages.
"""

from typing import Any, Optional


class QPEulerError(Exception):
    """Base class for all qpeuler errors"""


class ModeBudgetError(QPEulerError, ValueError):
    """The requested mode box holds more modes than the configured budget"""


class RankDeficientOmegaError(QPEulerError, ValueError):
    """Frequency matrix does not have full column rank"""


class NonUnitOmegaError(QPEulerError, ValueError):
    """canonical_omega expects a unit frequency vector"""


class ModeSetMismatchError(QPEulerError, ValueError):
    """Operands live on different ModeSet instances"""


class ResonanceError(QPEulerError, ArithmeticError):
    """A nonzero mode has a (numerically) vanishing exponent"""

    def __init__(self, message: str, mode: Optional[tuple] = None):
        super().__init__(message)
        self.mode = mode


class BulletSupportError(QPEulerError, ValueError):
    """inv_laplace_infty received coefficients on the bullet block"""


class DiffeoMarginError(QPEulerError, ArithmeticError):
    """Jacobian determinant margin is not positive"""

    def __init__(self, message: str, margin: float):
        super().__init__(message)
        self.margin = margin


class NewtonConvergenceError(QPEulerError, ArithmeticError):
    """Pointwise Newton inversion failed on some grid nodes"""

    def __init__(self, message: str, failed_nodes: int, worst_residual: float):
        super().__init__(message)
        self.failed_nodes = failed_nodes
        self.worst_residual = worst_residual


class SeriesTailError(QPEulerError, ArithmeticError):
    """Truncated exponential series has a tail bound above tolerance"""

    def __init__(self, message: str, tail_bound: float):
        super().__init__(message)
        self.tail_bound = tail_bound


class SolverAbort(QPEulerError, RuntimeError):
    """Time integration stopped; `state` is the last accepted state"""

    def __init__(self, message: str, state: Any = None, diagnostics: Any = None):
        super().__init__(message)
        self.state = state
        self.diagnostics = diagnostics


class ToleranceBreach(SolverAbort):
    """A monitored tolerance (divergence) was exceeded during a run"""


class ConfigError(QPEulerError, ValueError):
    """Configuration could not be parsed or validated"""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        location = []
        if field:
            location.append(f"field '{field}'")
        if line is not None:
            location.append(f"line {line}")
        full = f"{message} ({', '.join(location)})" if location else message
        super().__init__(full)
        self.field = field
        self.line = line


class GridBudgetError(QPEulerError, ValueError):
    """export-grid resolution exceeds the point budget"""
