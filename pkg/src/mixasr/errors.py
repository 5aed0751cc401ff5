"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(ValueError):
    """Numeric domain violation (log of non-positive, exp overflow, non-finite)."""


class LabelError(ValueError):
    """A target label lies outside the valid label range."""


class LengthError(ValueError):
    """A signal is too short (or lengths disagree) for the requested operation."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class ZeroReferenceError(ValueError):
    """SDR-style metric requested against an all-zero reference."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
