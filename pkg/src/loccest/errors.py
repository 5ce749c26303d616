"""Exception types shared across the package."""


class LoccestError(Exception):
    """Base class for package errors."""


class ValidationError(LoccestError):
    """Invalid input: bad vector, malformed history, schema violation."""


class ResourceLimitError(LoccestError):
    """A computation would exceed its configured resource budget."""

    def __init__(self, message: str, required: int | None = None,
                 allowed: int | None = None):
        if required is not None and allowed is not None:
            message = f"{message} (required {required}, allowed {allowed})"
        super().__init__(message)
        self.required = required
        self.allowed = allowed


class ExtrapolationError(LoccestError):
    """Extrapolation table too ill-conditioned to solve reliably."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition number {condition:.3e})")
        self.condition = condition
