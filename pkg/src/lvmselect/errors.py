"""Exception types shared across the package."""


class LvmSelectError(Exception):
    """Base class for all package errors."""


class ContractViolation(LvmSelectError):
    """An argument violated a documented precondition."""


class DegenerateMatrix(LvmSelectError):
    """A matrix required to be positive definite is not.

    Carries ``smallest_eigenvalue`` so callers can report how far the input
    is from positive definiteness.
    """

    def __init__(self, message, smallest_eigenvalue=None):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


class NumericalFailure(LvmSelectError):
    """A numerical routine produced non-finite values or failed to converge."""


class ModelCollapsed(LvmSelectError):
    """Pruning would remove every component (K would reach 0)."""


class BoundaryMode(LvmSelectError):
    """A scalar log-joint attains its maximum on the interval boundary."""
