"""Exception hierarchy."""


class FedTabError(Exception):
    """Base class for all package errors."""


class ConfigError(FedTabError, ValueError):
    pass


class SchemaError(FedTabError, ValueError):
    pass


class IngestionError(FedTabError, ValueError):
    """Raised while parsing CSV input; carries the offending row/column when known."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class EncodingError(FedTabError, ValueError):
    pass


class DecodingError(FedTabError, ValueError):
    pass


class ProtocolError(FedTabError, ValueError):
    """A client payload is inconsistent with what the server expects."""


class ContractError(FedTabError, ValueError):
    pass


class NumericalError(FedTabError, ArithmeticError):
    pass


class PhaseError(FedTabError):
    """Wraps an error raised inside a pipeline phase."""

    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"[{phase}] {type(cause).__name__}: {cause}")
        self.phase = phase
        self.cause = cause
