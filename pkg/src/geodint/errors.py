"""Exception hierarchy shared by all geodint modules."""


class GeodintError(Exception):
    """Base class for all errors raised by this package."""


class NonFinite(GeodintError):
    """An input contains NaN or infinite entries."""


class DimensionMismatch(GeodintError):
    """Operands have incompatible shapes."""


class SingularMatrix(GeodintError):
    """A linear solve met a pivot below the singularity threshold."""


class ArgumentTooLarge(GeodintError):
    """A tan-based coefficient was requested beyond its pole guard."""


class NotSymmetric(GeodintError):
    """An operation requiring a symmetric matrix received a non-symmetric one."""


class DomainViolation(GeodintError):
    """A state left the domain on which the problem is defined."""


class ThetaFormViolation(GeodintError):
    """A computed step coefficient lost the block structure that guarantees
    energy conservation."""


class ConfigError(GeodintError):
    """Invalid run configuration (CLI or programmatic)."""


class NoConvergence(GeodintError):
    """The implicit solver did not reach the requested tolerance."""

    def __init__(self, iterations, residual, message=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            message
            or f"no convergence after {iterations} iterations "
            f"(residual {residual:.3e})"
        )


class IntegrationError(GeodintError):
    """A step failed inside a trajectory integration.

    Carries the index of the failing step, the original error and the
    partial trajectory computed so far (may be None).
    """

    def __init__(self, index, cause, partial=None):
        self.index = index
        self.cause = cause
        self.partial = partial
        super().__init__(f"step {index} failed: {cause}")
