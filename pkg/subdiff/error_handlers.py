# error_handlers.py - Exceptions and structured error reports
"""
Exception hierarchy for the toolkit and the mapping from exceptions to
structured error payloads and process exit codes used by the CLI.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

import logging
import traceback
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

logger = logging.getLogger("subdiff")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


class SubdiffError(Exception):
    """Base class; subclasses set error_type, hint and exit_code."""

    error_type = "subdiff_error"
    hint = "Check the logs for details"
    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.context = context


# ==================== VALIDATION ====================

class InputValidationError(SubdiffError):
    error_type = "validation_error"
    hint = "Check field names, types and units in the run config"
    exit_code = EXIT_VALIDATION

    def __init__(self, message: str, errors: Optional[List[Dict[str, str]]] = None, **context: Any):
        super().__init__(message, **context)
        self.errors = errors or []


class DomainError(SubdiffError, ValueError):
    error_type = "domain_error"
    hint = "An argument is outside the domain of the routine"
    exit_code = EXIT_VALIDATION


# ==================== NUMERICAL FAILURES ====================

class EvaluationError(SubdiffError):
    error_type = "evaluation_error"
    hint = "Series did not converge within the configured term cap"

    def __init__(self, message: str, partial_sum: float = float("nan"), bound: float = float("nan"), **context: Any):
        super().__init__(message, **context)
        self.partial_sum = partial_sum
        self.bound = bound


class CancellationError(EvaluationError):
    error_type = "cancellation"
    hint = "Use the asymptotic branch for this argument"


class SeriesConvergenceError(EvaluationError):
    error_type = "series_convergence"
    hint = "Reduce k*·t^alpha or raise SUBDIFF_GREEN_SERIES_CAP"


class FitError(SubdiffError):
    error_type = "fit_error"
    hint = "Increase N, the multistart count, or relax eps_ceiling"

    def __init__(self, message: str, best_fit: Any = None, **context: Any):
        super().__init__(message, **context)
        self.best_fit = best_fit


class NullspaceError(SubdiffError):
    error_type = "nullspace_error"
    hint = "The state-exchange generator must have a one-dimensional nullspace"


class SolverError(SubdiffError):
    error_type = "solver_error"
    hint = "Reduce dt; negativity or NaN usually means the step is too large"

    def __init__(self, message: str, snapshot: Any = None, **context: Any):
        super().__init__(message, **context)
        self.snapshot = snapshot


class PropensityError(SubdiffError):
    error_type = "propensity_error"
    hint = "Lower the particle scale or the rate constants"


# ==================== PAYLOADS ====================

def validation_errors(exc: ValidationError) -> List[Dict[str, str]]:
    """Pydantic validation errors → JSON-pointer records."""
    errors = []
    for error in exc.errors():
        pointer = "/" + "/".join(str(loc) for loc in error.get("loc", []))
        errors.append({
            "pointer": pointer,
            "message": error.get("msg", "Invalid value"),
            "type": error.get("type", "unknown"),
        })
    return errors


def error_payload(exc: BaseException) -> Dict[str, Any]:
    """Map any exception to a structured, JSON-serializable dict."""
    if isinstance(exc, ValidationError):
        return {
            "detail": "Validation error",
            "error_type": "validation_error",
            "errors": validation_errors(exc),
            "hint": InputValidationError.hint,
        }

    if isinstance(exc, SubdiffError):
        payload: Dict[str, Any] = {
            "detail": str(exc),
            "error_type": exc.error_type,
            "hint": exc.hint,
        }
        if isinstance(exc, InputValidationError) and exc.errors:
            payload["errors"] = exc.errors
        if isinstance(exc, EvaluationError):
            payload["partial_sum"] = exc.partial_sum
            payload["bound"] = exc.bound
        if exc.context:
            payload["context"] = {k: _jsonable(v) for k, v in exc.context.items()}
        return payload

    return {
        "detail": "Internal error",
        "error_type": type(exc).__name__,
        "hint": "Check the logs for details",
    }


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, SubdiffError):
        return exc.exit_code
    return EXIT_NUMERICAL


def handle_error(exc: BaseException, command: str = "run"):
    """Log an exception and return (exit_code, payload)."""
    code = exit_code_for(exc)
    payload = error_payload(exc)
    if isinstance(exc, (ValidationError, SubdiffError)):
        logger.error("%s failed: %s (%s)", command, payload["detail"], payload["error_type"])
    else:
        logger.error(
            "Unhandled error in %s: %s: %s\n%s",
            command, type(exc).__name__, exc, traceback.format_exc(),
        )
    return code, payload


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    try:
        return float(value)
    except (TypeError, ValueError):
        return repr(value)
