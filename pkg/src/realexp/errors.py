"""Exception hierarchy. ``exit_code`` is what the command line returns."""


class RealExpError(Exception):
    exit_code = 1

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step

    def __str__(self):
        msg = super().__str__()
        return f"[{self.step}] {msg}" if self.step else msg


class ValidationError(RealExpError, ValueError):
    exit_code = 2


class CapacityError(ValidationError):
    """Problem too large for exact enumeration."""


class InsufficientDataError(ValidationError):
    pass


class FormatError(ValidationError):
    pass


class ModalityError(ValidationError):
    pass


class TransportError(RealExpError):
    exit_code = 3


class ProtocolError(TransportError):
    pass


class EvaluationError(RealExpError):
    exit_code = 4
