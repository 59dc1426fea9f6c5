"""Exception hierarchy shared by the library and the command line front end."""


class VcmError(Exception):
    """Base class for all errors raised by tbvcm."""


class UsageError(VcmError, ValueError):
    """Bad arguments: wrong shapes, invalid configuration, empty inputs."""


class DataError(VcmError, ValueError):
    """Malformed or inconsistent input data."""


class NumericError(VcmError, ArithmeticError):
    """A computation produced non-finite values."""


class ModelFormatError(DataError):
    """A model document could not be decoded."""


class UnseenLevelError(DataError):
    """A categorical level not seen during training reached a strict split."""
