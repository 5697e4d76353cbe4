"""Multi-scale, bidirectional video deblurring with key-value memory banks."""

from .config import ModelConfig, TrainConfig, load_config
from .errors import (ConfigError, EmptyMemoryError, MemDeblurError, NonFiniteLossError, SequenceIOError,
                     UsageError, ValidationError)
from .memory import MemoryBank, MemoryEntry, readout, should_memorize
from .pipeline import MemDeblurNet, RestorationResult, build_pyramid, reset_state, restore_sequence

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "TrainConfig", "load_config",
    "MemDeblurError", "ConfigError", "ValidationError", "UsageError", "EmptyMemoryError",
    "SequenceIOError", "NonFiniteLossError",
    "MemoryBank", "MemoryEntry", "readout", "should_memorize",
    "MemDeblurNet", "RestorationResult", "build_pyramid", "reset_state", "restore_sequence",
]
