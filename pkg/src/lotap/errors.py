"""Exception hierarchy shared by every lotap module."""


class LotapError(Exception):
    """Base class for all errors raised by lotap."""


class ValidationError(LotapError, ValueError):
    """Invalid argument, configuration or data."""


class DimensionError(ValidationError):
    """Tensor shapes do not conform."""


class InsufficientDataError(ValidationError):
    """The series is too short for the requested model order."""


class NumericalError(LotapError, ArithmeticError):
    """A numerical invariant was violated during computation."""


class SymmetryError(NumericalError):
    """An inverse transform that should be real left a large imaginary residue."""


class FormatError(LotapError):
    """A serialized file could not be decoded."""


class MalformedHeaderError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass
