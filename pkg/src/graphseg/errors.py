"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Raised when tensor or image extents are incompatible with an operation."""


class DataError(ValueError):
    """Raised when on-disk data (tiles, masks, palettes) violates its contract."""


class NumericError(ArithmeticError):
    """Raised when a computation hits invalid numeric territory (log of <= 0, non-finite loss)."""
