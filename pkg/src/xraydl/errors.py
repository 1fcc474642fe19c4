"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
1 for usage problems, 2 for data/format problems, 3 for divergence.
"""


class XrdlError(Exception):
    exit_code = 2


class UsageError(XrdlError):
    exit_code = 1


class ParameterError(UsageError, ValueError):
    pass


class ConfigError(UsageError):
    pass


class ShapeError(XrdlError, ValueError):
    pass


class NumericError(XrdlError, ArithmeticError):
    pass


class LabelError(XrdlError, ValueError):
    pass


class IngestionError(XrdlError):
    pass


class DecodeError(XrdlError):
    pass


class FormatError(XrdlError):
    pass


class CorruptionError(XrdlError):
    pass


class VersionError(XrdlError):
    pass


class ConsistencyError(XrdlError):
    pass


class DivergenceError(XrdlError):
    exit_code = 3

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])
