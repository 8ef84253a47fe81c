"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Raised when an element is degenerate or inverted."""


class AssemblyError(ValueError):
    """Raised when the discrete system cannot be assembled as requested."""


class SingularSystemError(AssemblyError):
    """Raised when the assembled system has a known nullspace (pure Neumann, steady)."""


class FactorizationError(RuntimeError):
    """Raised when a dense or incomplete factorization fails."""


class ConvergenceError(RuntimeError):
    """Raised when the iterative solver fails during a transient run."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
