"""Subcommands of the seclend-haircut command line."""

from typing import Any, Dict

from ..errors import CalibrationError, TargetUnreachableError

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NOT_CONVERGED = 2
EXIT_TARGET_UNREACHABLE = 3
EXIT_SELF_CHECK_FAILED = 4


def failure(error: str, details: Any, exit_code: int = EXIT_INPUT_ERROR) -> Dict[str, Any]:
    return {
        "success": False,
        "error": error,
        "details": str(details),
        "exit_code": exit_code,
    }


def domain_failure(exc: Exception, action: str) -> Dict[str, Any]:
    """Result payload for a model error raised while running ``action``."""
    if isinstance(exc, TargetUnreachableError):
        result = failure("Target unreachable", exc, EXIT_TARGET_UNREACHABLE)
        result["achieved_metric"] = exc.achieved
        result["h_max"] = exc.h_max
        return result
    if isinstance(exc, CalibrationError):
        result = failure("Calibration did not converge", exc, EXIT_NOT_CONVERGED)
        result["diagnostics"] = exc.diagnostics
        return result
    return failure(f"Failed to {action}", exc, EXIT_INPUT_ERROR)
