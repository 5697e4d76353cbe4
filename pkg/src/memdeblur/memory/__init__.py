from .bank import MemoryBank, MemoryEntry, Readout, affinity, attention_weights, readout, should_memorize
from .codec import MemoryCodec, MemoryDecoder, MemoryEncoder

__all__ = [
    "MemoryBank", "MemoryEntry", "Readout", "affinity", "attention_weights", "readout", "should_memorize",
    "MemoryCodec", "MemoryDecoder", "MemoryEncoder",
]
