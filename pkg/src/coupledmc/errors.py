class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


class NumericError(ArithmeticError):
    """Non-finite state or gradient encountered during simulation/training."""


class EpisodeFinished(RuntimeError):
    """Raised when stepping an environment that already reached step N."""
