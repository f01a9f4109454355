"""Exception types raised by the library."""


class CrwScatterError(Exception):
    """Base class for all library errors."""


class ParameterError(CrwScatterError, ValueError):
    """Model parameters violate a physical or structural invariant."""


class ResourceLimitError(CrwScatterError):
    """A requested basis or dense matrix exceeds the configured size limit."""

    def __init__(self, message, dim):
        super().__init__(message)
        self.dim = dim


class ContractError(CrwScatterError):
    """Objects built for different bases or parameters were combined."""


class BWPTError(CrwScatterError):
    """Small denominator met during a Brillouin-Wigner iteration."""


class PoleError(CrwScatterError):
    """Scattering energy sits on an uncoupled or degenerate pole of the scatterer."""


class ConservationError(CrwScatterError):
    """Flow conservation violated beyond the hard limit."""


class MissingBoundStateError(CrwScatterError):
    """A required bound state could not be identified."""


class ConfigError(CrwScatterError):
    """Run configuration failed schema or physics validation."""
