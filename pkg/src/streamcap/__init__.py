"""Streaming clustering memory, decoding-point scheduling and dense-captioning metrics."""

__version__ = "0.1.0"

from .codec import TimedEvent, VocabSpec, decode_tokens, encode_events
from .errors import DegenerateInstanceError, FormatError, InvalidArgumentError, StateError
from .memory import MemoryConfig, MemoryState, StreamingMemory, TokenStream, init_memory, update_memory

__all__ = [
    "DegenerateInstanceError",
    "FormatError",
    "InvalidArgumentError",
    "MemoryConfig",
    "MemoryState",
    "StateError",
    "StreamingMemory",
    "TimedEvent",
    "TokenStream",
    "VocabSpec",
    "decode_tokens",
    "encode_events",
    "init_memory",
    "update_memory",
]
