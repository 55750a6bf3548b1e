"""Exception hierarchy shared across the package.

Each error class carries the process exit code the CLI uses when it escapes
to the top level.
"""


class SGFAError(Exception):
    exit_code = 1


class InvalidArgumentError(SGFAError, ValueError):
    exit_code = 2


class ConfigError(InvalidArgumentError):
    exit_code = 2


class ShapeError(InvalidArgumentError):
    exit_code = 2


class DataError(SGFAError):
    """Unreadable, malformed or inconsistent input data."""

    exit_code = 3


class ParseError(DataError):
    pass


class AlignmentError(DataError):
    pass


class DegenerateDataError(DataError):
    """A view or feature left with nothing usable (all dropped, zero variance, ...)."""


class ImputeError(DataError):
    pass


class CollinearityError(DataError):
    pass


class NumericalError(SGFAError, ArithmeticError):
    exit_code = 4


class AdaptationError(NumericalError):
    pass


class RunFailureError(NumericalError):
    pass


class DependencyError(SGFAError):
    """A pipeline stage was invoked before the artifacts it consumes exist."""

    exit_code = 5


class DegenerateTestError(NumericalError):
    pass
