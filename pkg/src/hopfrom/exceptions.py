"""Exception hierarchy shared across the package."""


class HopfRomError(Exception):
    """Base class for package errors."""


class ConfigError(HopfRomError):
    """Invalid user-supplied configuration (CLI exit code 2)."""


class NumericalError(HopfRomError):
    """Numerical failure: divergence, singularity, non-convergence (exit 3)."""


class EigenSolveError(NumericalError):
    """Eigenvalue solver failed to converge or to meet its residual target."""


class AmbiguousModeError(EigenSolveError):
    """Two candidate eigenvalue pairs with real parts within tolerance."""


class SingularSystemError(NumericalError):
    """A linear solve hit a (near-)singular matrix."""


class CycleNotFoundError(NumericalError):
    """An operation requiring a limit cycle found none."""
