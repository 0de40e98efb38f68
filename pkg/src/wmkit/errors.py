"""Exception hierarchy shared by every wmkit module."""


class WmkitError(Exception):
    """Base class for all toolkit errors."""


class InvalidDistribution(WmkitError):
    """Probability vector is negative, all-zero, or does not sum to one."""


class DimensionMismatch(WmkitError):
    """Two objects that must share a vocabulary size do not."""


class InvalidArgument(WmkitError):
    """Scalar parameter outside its documented range."""


class EmptyVocabulary(WmkitError):
    """An operation that needs at least one token got a size-0 vocabulary."""


class TooShort(WmkitError):
    """Text too short to score (detectors need at least two tokens)."""


class EnumerationTooLarge(WmkitError):
    """Exact permutation enumeration requested beyond the supported size."""
