"""Exception hierarchy shared by the library and the command-line tool."""


class DDNNError(Exception):
    """Base class for all errors raised by :mod:`ddnn_vad`."""

    exit_code = 1


class ConfigError(DDNNError, ValueError):
    """Invalid configuration value or file."""

    exit_code = 2


class DataError(DDNNError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class ShapeError(DataError):
    """Array widths do not agree."""


class NumericalError(DDNNError, ArithmeticError):
    """Training produced a non-finite value."""

    exit_code = 4
