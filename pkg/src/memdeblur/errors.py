"""Exception hierarchy shared by the library and the CLI."""


class MemDeblurError(Exception):
    """Base class; ``kind`` is the token printed on the CLI error line."""

    kind = "error"


class ConfigError(MemDeblurError, ValueError):
    kind = "config"


class ValidationError(MemDeblurError, ValueError):
    kind = "validation"


class UsageError(MemDeblurError, ValueError):
    kind = "usage"


class EmptyMemoryError(MemDeblurError, LookupError):
    """Raised when a readout is attempted against a bank with no entries."""

    kind = "no_memory"


class SequenceIOError(MemDeblurError, OSError):
    kind = "io"


class NonFiniteLossError(MemDeblurError, FloatingPointError):
    kind = "non_finite_loss"
