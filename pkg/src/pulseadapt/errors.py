"""Exception types shared across the package."""


class PulseAdaptError(Exception):
    """Base class for all package errors."""


class DataError(PulseAdaptError):
    """Malformed or inconsistent input data."""


class LengthMismatch(DataError):
    pass


class RateMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


# Some call sites name the same failure ShapeError; keep one class.
ShapeError = ShapeMismatch


class NonFinite(DataError):
    pass


class BadRange(DataError):
    pass


class BadRate(DataError):
    pass


class BadSplit(DataError):
    pass


class BadSpec(DataError):
    pass


class BadConfig(DataError):
    pass


class BadLayer(DataError):
    pass


class TooShort(DataError):
    pass


class StreamTooShort(DataError):
    pass


class TooFewPeaks(DataError):
    pass


class EmptyBatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class MissingLabels(DataError):
    pass


class MissingFile(DataError):
    pass


class DecodeError(DataError):
    pass


class DegenerateVariance(DataError):
    pass


class NumericError(PulseAdaptError):
    """Numerical failure during optimization or inference."""


class NonFiniteGradient(NumericError):
    pass
