"""Exception hierarchy shared by every corrgan module."""


class CorrGANError(Exception):
    """Base class for all corrgan errors."""


class InvalidSpec(CorrGANError, ValueError):
    """An argument, config value or precondition is invalid."""


class UnsupportedCorruption(CorrGANError, KeyError):
    """The requested corruption kind is not registered."""

    def __str__(self):
        return Exception.__str__(self)


class ShapeError(CorrGANError, ValueError):
    """An array or tensor does not have the expected shape."""


class NumericalError(CorrGANError, ArithmeticError):
    """A NaN or infinite value appeared where a finite one is required."""


class IoError(CorrGANError, OSError):
    """A required file or directory is missing or unwritable."""


class ChecksumError(CorrGANError):
    """A checkpoint blob is corrupt or does not match its manifest."""


class ManifestError(CorrGANError):
    """A manifest is malformed or names the wrong model role."""
