"""Exception hierarchy shared by all auvkit modules."""


class AuvKitError(Exception):
    """Base class for all errors raised by auvkit."""


class FormatError(AuvKitError):
    """A file does not conform to the expected container or schema."""


class DataError(AuvKitError):
    """Array contents violate a value-domain contract (NaN/Inf, out of range)."""


class ShapeError(AuvKitError):
    """Array rank or dimensions do not match the expected layout."""


class ClassError(AuvKitError):
    """A class id is unknown, absent, or missing a required value."""


class ParameterError(AuvKitError):
    """A scalar parameter is outside its documented domain."""


class NumericalError(AuvKitError):
    """A numerical routine failed to converge after all retry paths."""


class IoError(AuvKitError):
    """A path could not be read or written."""


class InputError(AuvKitError):
    """A batch-level input (directory, record file) is empty or unusable."""
