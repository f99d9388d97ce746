"""Exception types shared across the package.

Each error carries the CLI exit code it maps to.
"""


class AggrNetError(Exception):
    exit_code = 1


class ShapeError(AggrNetError, ValueError):
    exit_code = 2


class UsageError(AggrNetError, ValueError):
    exit_code = 2


class ConfigError(AggrNetError, ValueError):
    exit_code = 2


class DataError(AggrNetError, ValueError):
    exit_code = 3


class NumericError(AggrNetError, ArithmeticError):
    exit_code = 4


class IntegrityError(AggrNetError, IOError):
    exit_code = 5
