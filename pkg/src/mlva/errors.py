"""Exception taxonomy shared by all modules.

The CLI maps these onto exit codes: usage problems exit 1, data/config
problems exit 2, numerical problems exit 3.
"""


class MlvaError(Exception):
    """Base class for all library errors."""


class DimensionError(MlvaError):
    """Shapes (or dtypes) of tensor operands do not line up."""


class ConfigError(MlvaError):
    """A configuration value or combination is invalid."""


class DataError(MlvaError):
    """A sample, annotation, or dataset violates its contract."""


class ParseError(DataError):
    """A dataset file could not be parsed.

    Carries the 1-based line number (or byte offset for binary files).
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptySequenceError(DataError):
    """An operation that needs at least one element got none."""


class NumericalError(MlvaError):
    """A non-finite value appeared, or a numeric procedure failed."""


class DegenerateInputError(NumericalError):
    """Inputs are numerically degenerate (e.g. two zero-norm vectors)."""


class GraphError(MlvaError):
    """Misuse of the autodiff tape (e.g. backward without a live graph)."""


class CheckpointError(MlvaError):
    """A checkpoint file is missing, corrupt, or version-incompatible."""
