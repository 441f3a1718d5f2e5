"""Exception types raised across the package."""


class LmtgpError(Exception):
    pass


class ShapeError(LmtgpError, ValueError):
    pass


class DimensionMismatch(LmtgpError, ValueError):
    pass


class NotPositiveDefinite(LmtgpError, ArithmeticError):
    pass


class InsufficientSamples(LmtgpError, ValueError):
    pass


class InsufficientCandidates(LmtgpError, ValueError):
    pass


class DegenerateVariance(LmtgpError, ArithmeticError):
    pass


class NonFiniteLoss(LmtgpError, ArithmeticError):
    pass


class WindowTooLarge(LmtgpError, ValueError):
    pass


class PatchTooLarge(LmtgpError, ValueError):
    pass


class UnsupportedFormat(LmtgpError, ValueError):
    pass


class CorruptFile(LmtgpError, IOError):
    pass


class ParseError(LmtgpError, ValueError):
    """Malformed configuration text; carries the offending line number."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class ValidationError(LmtgpError, ValueError):
    """A configuration value is outside its allowed range."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
