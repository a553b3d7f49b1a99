class InvalidParameter(ValueError):
    pass


class OutOfBounds(ValueError):
    pass


class ResourceError(RuntimeError):
    """Requested exact computation exceeds the enumeration cap."""


class CFTPTimeout(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InvariantViolation(AssertionError):
    pass
