"""Exception hierarchy shared by every module.

Each class carries the process exit code the command-line front end maps it to.
"""


class AlhError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(AlhError, ValueError):
    """Malformed or inconsistent configuration (grid bounds, config files, flags)."""

    exit_code = 2


class PreconditionError(AlhError, ValueError):
    """An operation was called outside its documented domain of validity."""


class DomainError(AlhError, ValueError):
    """A field violates a positivity or monotonicity requirement."""


class AmplitudeError(DomainError):
    """Model amplitudes too large for the tangential metric to stay definite."""


class RangeError(AlhError, ValueError):
    """Not enough stations or scales to fit an exponent."""


class DataError(AlhError, ValueError):
    """Input samples are unusable (negative norms, non-finite values)."""


class SolverError(AlhError, RuntimeError):
    """A linear solve or search failed to converge."""


class InternalConsistencyError(AlhError, RuntimeError):
    """A structural invariant (symmetry, realness) was violated beyond tolerance."""


class ChartRejected(SolverError):
    """A boundary chart failed its Jacobian bound; ``proxy`` is the measured max gradient of u."""

    def __init__(self, message: str, proxy: float, jacobian_min: float):
        super().__init__(message)
        self.proxy = proxy
        self.jacobian_min = jacobian_min
