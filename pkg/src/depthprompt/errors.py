"""Exception types raised across the package."""


class DepthPromptError(Exception):
    """Base class for all package errors."""


class FormatError(DepthPromptError, ValueError):
    """A file does not follow the declared layout."""


class DataError(DepthPromptError, ValueError):
    """Payload values violate a raster invariant (negative, NaN, inf)."""


class ContractError(DepthPromptError, ValueError):
    """Inputs disagree in shape or violate a precondition."""


class EmptyEvaluationError(DepthPromptError, ValueError):
    """No pixel survived the validity / evaluation-window mask."""


class InsufficientSupportError(DepthPromptError, ValueError):
    """A sampler was asked for more points than the source can supply."""


class NoSupportError(DepthPromptError, ValueError):
    """Scale fit has no co-valid pixel."""


class DegenerateSupportError(DepthPromptError, ValueError):
    """Scale fit support has zero relative-depth energy."""


class DomainError(DepthPromptError, ValueError):
    """A loss was evaluated outside its domain (e.g. log of a non-positive value)."""


class ConfigurationError(DepthPromptError, ValueError):
    """Invalid run configuration or model setup."""


class DivergenceError(DepthPromptError, RuntimeError):
    """Training produced a non-finite loss."""
