"""Exception taxonomy shared across the package."""


class SplitMixerError(Exception):
    """Base class for all package errors."""


class ShapeError(SplitMixerError):
    """Tensor shapes violate an operation's contract."""


class ConfigError(SplitMixerError):
    """Invalid model or run configuration."""


class ParseError(ConfigError):
    """Malformed model name or config text."""


class ContractError(SplitMixerError):
    """An API precondition was violated (non-scalar loss, step out of range, ...)."""


class DataError(SplitMixerError):
    """Dataset content is invalid (bad label, pixel range, ...)."""


class FormatError(SplitMixerError):
    """A binary container (checkpoint, CIFAR record) is malformed."""


class NumericsError(SplitMixerError):
    """Non-finite values where finite ones are required (NaN loss/grad)."""
