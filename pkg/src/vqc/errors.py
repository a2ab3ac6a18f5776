class VqcError(Exception):
    exit_code = 1


class ConfigError(VqcError, ValueError):
    """Bad configuration or mismatched dimensions."""

    exit_code = 2


class UsageError(VqcError, RuntimeError):
    """An operation was called in a state that does not allow it."""


class DivergenceError(VqcError, FloatingPointError):
    """Training produced a non-finite loss."""

    exit_code = 3


class ArtifactError(VqcError, OSError):
    """A binary artifact or report could not be read or written."""

    exit_code = 4
