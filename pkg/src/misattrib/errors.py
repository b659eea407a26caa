"""Exception hierarchy.

Each class carries the CLI exit code it maps to.
"""


class MisattribError(Exception):
    exit_code = 3


class ConfigError(MisattribError, ValueError):
    exit_code = 1


class DataError(MisattribError, ValueError):
    exit_code = 2


class DegenerateError(DataError):
    """A computation is undefined for the given input (zero vector, zero variance, ...)."""


class InvariantViolation(MisattribError, AssertionError):
    exit_code = 3


class StageError(MisattribError):
    """A pipeline stage failed; wraps the original error and names the stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
