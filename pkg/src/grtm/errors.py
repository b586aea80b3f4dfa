"""Exception types raised across the package."""


class GRTMError(Exception):
    """Base class for all package errors."""


class ContractError(GRTMError, ValueError):
    """An argument violates an operation's preconditions."""


class NumericError(GRTMError, ArithmeticError):
    """A computation reached a degenerate or non-finite state."""


class FormatError(GRTMError):
    """Malformed input file.

    ``position`` is a human readable location (``"line 4"`` or
    ``"byte 128"``) when one is known.
    """

    def __init__(self, message, path=None, position=None):
        self.path = path
        self.position = position
        where = ", ".join(str(p) for p in (path, position) if p is not None)
        super().__init__(f"{where}: {message}" if where else message)
