"""Exception taxonomy shared by all modules.

The CLI maps these onto exit codes: config/usage problems exit 1,
numerical failures exit 2, I/O failures exit 3.
"""


class CollapseLabError(Exception):
    """Base class for all package errors."""


class RejectedInputError(CollapseLabError, ValueError):
    """An argument violates a precondition (shape, range, count)."""


class DegenerateInputError(CollapseLabError, ValueError):
    """Input is structurally degenerate (zero rows, collapsed clusters)."""


class NumericalFailureError(CollapseLabError, ArithmeticError):
    """An iterative scheme failed to converge.

    Carries the final residual so callers can report how far off it was.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class FitFailureError(CollapseLabError, RuntimeError):
    """A least-squares fit could not be performed on the given data."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
