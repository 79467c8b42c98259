"""Exception types shared across the package."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or infinity in its output."""


class ShapeError(ValueError):
    """Operands have incompatible or unsupported shapes."""


class MaskError(ValueError):
    """An attention row is fully masked and has no valid key."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


class DataError(ValueError):
    """An input series or file failed validation."""


class TokenizeError(ValueError):
    """Text contains bytes outside the supported alphabet."""


class LengthError(ValueError):
    """A token sequence exceeds the maximum sequence length."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
