"""Exception types shared across the package."""


class CrowdSpeedError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CrowdSpeedError):
    """A scenario/calibration file could not be parsed."""


class ValidationError(CrowdSpeedError):
    """A parsed value violates an invariant. ``field`` names the offender."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class AdjacencyError(CrowdSpeedError):
    """Grid step too small for the per-step displacement (one-cell moves broken)."""


class ConvergenceError(CrowdSpeedError):
    """An iterative solver failed to reach its residual target."""


class DisconnectedChainError(CrowdSpeedError):
    """The two region blocks of a position chain have no coupling."""


class ModelDomainError(CrowdSpeedError):
    """Arguments outside the domain the closed-form model was derived for."""


class DegenerateSequenceError(CrowdSpeedError):
    """An event sequence is constant, so correlation is undefined.

    ``partial`` may carry whatever statistics were computable anyway
    (e.g. per-link crossing probabilities).
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class EstimationError(CrowdSpeedError):
    """Speed estimation could not proceed (missing inputs, empty data)."""
