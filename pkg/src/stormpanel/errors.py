"""Exception hierarchy shared across the package."""


class StormpanelError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(StormpanelError):
    """An input file violates its documented grammar."""


class EmptyInputError(FormatError):
    """An input file contains no usable content at all."""


class ConfigError(StormpanelError):
    """A run configuration is invalid (bad key, bad value, missing file)."""


class StaleUpstreamError(StormpanelError):
    """A stage input does not match the hash recorded by the producing stage."""


class EstimationError(StormpanelError):
    """A statistical fit cannot proceed (rank deficiency, non-convergence)."""
