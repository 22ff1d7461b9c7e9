"""Exception hierarchy shared by every vcc module."""


class VCCError(Exception):
    """Base class for all errors raised by vcc."""


class IoError(VCCError, OSError):
    """Input file is missing or unreadable."""


class ParseError(VCCError, ValueError):
    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class ShapeError(VCCError, ValueError):
    pass


class FormatError(VCCError, ValueError):
    pass


class LengthError(VCCError, ValueError):
    pass


class ArgumentError(VCCError, ValueError):
    pass


class MultiplicityOverflowError(VCCError, OverflowError):
    """An edge would be duplicated more often than the configured cap."""


class EmptyPoolError(VCCError, ValueError):
    pass


class SaturationError(VCCError, RuntimeError):
    """The graph is (nearly) complete, so disconnected pairs cannot be drawn."""


class NonFiniteError(VCCError, FloatingPointError):
    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class DegenerateColumnError(VCCError, ValueError):
    """A cluster received (numerically) zero total assignment mass."""


class DegenerateError(VCCError, ValueError):
    pass


class DimensionError(VCCError, ValueError):
    pass
