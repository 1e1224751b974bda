"""Exception hierarchy shared by every snnforge module."""


class SNNForgeError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(SNNForgeError, ValueError):
    pass


class InvalidStride(SNNForgeError, ValueError):
    pass


class NonFinite(SNNForgeError, ValueError):
    """Raised when a NaN or Inf enters or leaves a public numeric operation."""


class UnfinalizedParams(SNNForgeError, ValueError):
    pass


class MissingLayer(SNNForgeError, KeyError):
    pass


class EmptyClass(SNNForgeError, ValueError):
    pass


class FormatError(SNNForgeError, ValueError):
    """Malformed model or dataset file (bad magic, version, offsets, truncation)."""


class CountMismatch(FormatError):
    pass
