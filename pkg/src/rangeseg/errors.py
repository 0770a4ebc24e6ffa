"""Exception hierarchy shared by every module of the package."""


class RangeSegError(Exception):
    """Base class for all errors raised by rangeseg."""


class FormatError(RangeSegError, ValueError):
    """A file could not be decoded."""


class SizeNotMultipleOf16(FormatError):
    pass


class NonFiniteValue(FormatError):
    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"non-finite value in record {index}")


class BadMagic(FormatError):
    pass


class UnsupportedDtypeOrShape(FormatError):
    pass


class LengthMismatch(RangeSegError, ValueError):
    pass


class ZeroPoint(RangeSegError, ValueError):
    pass


class MissingChannel(RangeSegError, KeyError):
    pass


class ShapeMismatch(RangeSegError, ValueError):
    pass


class OddSpatialDim(ShapeMismatch):
    pass


class IndivisibleSpatialDims(ShapeMismatch):
    pass


class NonScalarLoss(RangeSegError, ValueError):
    pass


class NonFiniteProbability(RangeSegError, ValueError):
    pass


class EmptyDataset(RangeSegError, ValueError):
    pass


class ShapeHeterogeneity(RangeSegError, ValueError):
    pass


class DegenerateConfig(RangeSegError, ValueError):
    pass


class ConfigError(RangeSegError, ValueError):
    """Unknown key or malformed value in a run configuration."""
