"""Exception hierarchy shared across the package.

Each class maps onto one CLI exit code (see ``hetg.cli``).
"""


class HetgError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(HetgError, ValueError):
    """Input data or configuration violates a documented contract."""

    exit_code = 1


class ParseError(ValidationError):
    """A file line could not be parsed."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class TransportError(HetgError):
    """Remote oracle could not be reached after all retries."""

    exit_code = 2

    def __init__(self, message, status=None):
        self.status = status
        super().__init__(message)


class ProtocolError(HetgError):
    """Remote oracle answered with a body we cannot interpret."""

    exit_code = 2


class NumericalError(HetgError, ArithmeticError):
    """A non-finite value appeared during the forward pass or training."""

    exit_code = 3
