"""Exception hierarchy for the fine-tuning runner."""


class RunnerError(Exception):
    """Base class for every error this package raises on purpose."""


class ConfigurationError(RunnerError):
    """A manifest, phase config, or checkpoint violates its contract."""


class DataError(RunnerError):
    """An input split file is malformed or inconsistent with the checkpoint."""
