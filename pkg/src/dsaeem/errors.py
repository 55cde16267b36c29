"""Exception hierarchy; each family maps to one CLI exit code."""


class DsaeemError(Exception):
    exit_code = 1


class ConfigError(DsaeemError, ValueError):
    exit_code = 1


class DataError(DsaeemError, ValueError):
    exit_code = 2


class NumericalError(DsaeemError, ArithmeticError):
    """Raised when an optimizer produces a non-finite value.

    ``last_state`` carries the last finite iterate so callers can report it.
    """

    exit_code = 3

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state
