class ConfigError(ValueError):
    """Malformed configuration or a parameter outside its physical bounds."""


class NumericalError(ArithmeticError):
    """A numerical procedure diverged, failed to converge, or produced non-finite values."""
