"""Exception hierarchy. Each category maps to a CLI exit code."""


class FlexError(Exception):
    exit_code = 1


class ConfigError(FlexError, ValueError):
    exit_code = 2


class DataError(FlexError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    pass


class FormatError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class IOFailure(FlexError, OSError):
    exit_code = 4


class NumericError(FlexError, ArithmeticError):
    exit_code = 5


class UsageError(FlexError, ValueError):
    """Called with arguments that violate an operation's preconditions."""
    exit_code = 2
