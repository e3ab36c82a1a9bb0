"""Exception types shared across the package."""


class SatebdError(Exception):
    """Base class for all package errors."""


class SingularityError(SatebdError, ValueError):
    """An analytic formula was evaluated at (or too close to) a pole."""


class ChargeViolationError(SatebdError, ValueError):
    """A gate or tensor mixes particle-number sectors."""


class DecompositionError(SatebdError, RuntimeError):
    """A singular value decomposition failed in every LAPACK driver."""


class ConvergenceError(SatebdError, RuntimeError):
    """Imaginary-time evolution did not converge within its sweep budget."""


class TruncationDominatedError(SatebdError, RuntimeError):
    """Discarded Schmidt weight exceeded the configured abort threshold."""


class ConfigError(SatebdError, ValueError):
    """A run configuration is malformed or violates a precondition."""


class BoundaryContaminationError(SatebdError, RuntimeError):
    """Wavepacket amplitude reached the chain edges before measurement."""
