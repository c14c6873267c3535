"""
Haircut Model Errors

Exception hierarchy shared by the pricing engine and the command surface.
"""

from typing import Any, Dict, List, Optional


class HaircutModelError(Exception):
    """Base class for every error raised by the haircut model."""
    pass


class ParameterValidationError(HaircutModelError):
    """Raised when a parameter record violates one or more invariants."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ConfigurationError(HaircutModelError):
    """Raised when a run configuration is incomplete or inconsistent."""
    pass


class InputDataError(HaircutModelError):
    """Raised when an input file cannot be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DensityTruncationError(HaircutModelError):
    """Raised when the Poisson-mixture density cannot meet its tolerance."""
    pass


class CalibrationError(HaircutModelError):
    """Raised when no maximum likelihood start converges."""

    def __init__(self, message: str, diagnostics: Optional[List[Dict[str, Any]]] = None):
        self.diagnostics = diagnostics or []
        super().__init__(message)


class TargetUnreachableError(HaircutModelError):
    """Raised when the rating target is not met even at the maximum haircut."""

    def __init__(self, label: str, threshold: float, h_max: float, achieved: float):
        self.label = label
        self.threshold = threshold
        self.h_max = h_max
        self.achieved = achieved
        super().__init__(
            f"target {label} ({threshold:.3e}) unreachable: metric at "
            f"h_max={h_max:.4f} is {achieved:.3e}"
        )


class InconsistentMetricsError(HaircutModelError):
    """Raised when pricing inputs have an expected loss above the expected shortfall."""
    pass
