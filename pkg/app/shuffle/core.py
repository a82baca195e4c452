"""
Core shuffle types: worker ids, messages, buffers, and the registries for
partition and combiner functions.

Messages are opaque byte key/value pairs. Numeric combiners decode values
with a fixed little-endian 8-byte integer codec so byte accounting stays
deterministic.
"""

import logging
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence

from app.shuffle.errors import InstantiationError, InvalidArgumentError, PlanError

logger = logging.getLogger("shuffle_core")

WorkerId = int
ServerId = int
RackId = int

# Framing overhead charged to every message.
HEADER_BYTES = 8

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF

_INT_CODEC = struct.Struct("<q")


# --- Hashing and value codec ---

@lru_cache(maxsize=1 << 18)
def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64-bit hash of a byte string (the stable key hash)."""
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & MASK64
    return h


def encode_int(value: int) -> bytes:
    """Encodes an integer as a fixed-width little-endian 8-byte value."""
    return _INT_CODEC.pack(value)


def decode_int(raw: bytes) -> int:
    """Decodes a fixed-width little-endian 8-byte value."""
    if len(raw) != _INT_CODEC.size:
        raise InvalidArgumentError(f"integer values must be 8 bytes, got {len(raw)}")
    return _INT_CODEC.unpack(raw)[0]


# --- Messages and buffers ---

@dataclass(frozen=True)
class Message:
    """One key/value record moved by a shuffle."""

    key: bytes
    value: bytes = b""

    def __post_init__(self):
        if not isinstance(self.key, bytes) or not self.key:
            raise InvalidArgumentError("message key must be a non-empty byte string")
        if not isinstance(self.value, bytes):
            raise InvalidArgumentError("message value must be a byte string")

    @property
    def size(self) -> int:
        return len(self.key) + len(self.value) + HEADER_BYTES

    @classmethod
    def of_int(cls, key, value: int) -> "Message":
        """Builds a message with an integer value; str keys are UTF-8 encoded."""
        if isinstance(key, str):
            key = key.encode("utf-8")
        return cls(key, encode_int(value))

    def int_value(self) -> int:
        return decode_int(self.value)


class MessageBuffer:
    """
    Ordered multiset of messages with a cached byte count.

    A buffer has a single owner at a time; once handed to a channel the
    sender no longer mutates it.
    """

    __slots__ = ("_msgs", "_total_bytes")

    def __init__(self, msgs: Optional[Iterable[Message]] = None):
        self._msgs: List[Message] = []
        self._total_bytes = 0
        if msgs is not None:
            self.extend(msgs)

    @property
    def total_bytes(self) -> int:
        return self._total_bytes

    @property
    def msgs(self) -> List[Message]:
        return list(self._msgs)

    def append(self, msg: Message) -> None:
        self._msgs.append(msg)
        self._total_bytes += msg.size

    def extend(self, msgs: Iterable[Message]) -> None:
        for msg in msgs:
            self.append(msg)

    def check_invariant(self) -> None:
        """Raises PlanError if the cached byte count drifted from the contents."""
        actual = sum(m.size for m in self._msgs)
        if actual != self._total_bytes:
            raise PlanError(f"buffer byte count {self._total_bytes} != actual {actual}")

    def to_dict(self) -> Dict[bytes, Message]:
        """Key -> message map; only meaningful for combined buffers."""
        return {m.key: m for m in self._msgs}

    def __iter__(self) -> Iterator[Message]:
        return iter(self._msgs)

    def __len__(self) -> int:
        return len(self._msgs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MessageBuffer):
            return NotImplemented
        return self._msgs == other._msgs

    def __repr__(self) -> str:
        return f"MessageBuffer(msgs={len(self._msgs)}, bytes={self._total_bytes})"


def merge_buffers(buffers: Iterable[MessageBuffer]) -> MessageBuffer:
    """Concatenates buffers in iteration order."""
    merged = MessageBuffer()
    for buf in buffers:
        merged.extend(buf)
    return merged


# --- Partition and combiner functions ---

@dataclass(frozen=True)
class PartitionFn:
    """
    Maps a message to an index into a destination list.

    The result must depend only on the key and the length of the
    destination list.
    """

    id: str
    eval: Callable[[Message, Sequence], int]


@dataclass(frozen=True)
class CombinerFn:
    """Folds two equal-key messages into one; commutative and associative."""

    id: str
    eval: Callable[[Message, Message], Message]


_PARTITIONERS: Dict[str, PartitionFn] = {}
_COMBINERS: Dict[str, CombinerFn] = {}


def register_partitioner(fn: PartitionFn) -> PartitionFn:
    _PARTITIONERS[fn.id] = fn
    return fn


def register_combiner(fn: CombinerFn) -> CombinerFn:
    _COMBINERS[fn.id] = fn
    return fn


def get_partitioner(fn_id: Optional[str]) -> PartitionFn:
    """Resolves a partition function id; None means the default partitioner."""
    if fn_id is None:
        fn_id = "default"
    try:
        return _PARTITIONERS[fn_id]
    except KeyError:
        raise InstantiationError(f"unknown partition function: {fn_id}") from None


def get_combiner(fn_id: str) -> CombinerFn:
    try:
        return _COMBINERS[fn_id]
    except KeyError:
        raise InstantiationError(f"unknown combiner function: {fn_id}") from None


def registered_combiners() -> List[str]:
    return sorted(_COMBINERS)


def default_partition(msg: Message, dsts: Sequence) -> int:
    """
    The default hash partitioner: H64(key) mod len(dsts).

    Raises:
        InvalidArgumentError: If dsts is empty.
    """
    if len(dsts) == 0:
        raise InvalidArgumentError("destination list must not be empty")
    return fnv1a_64(msg.key) % len(dsts)


def _fold_ints(op: Callable[[int, int], int]) -> Callable[[Message, Message], Message]:
    def fold(a: Message, b: Message) -> Message:
        if a.key != b.key:
            raise PlanError(f"combiner applied to different keys {a.key!r} and {b.key!r}")
        return Message(a.key, encode_int(op(decode_int(a.value), decode_int(b.value))))
    return fold


register_partitioner(PartitionFn("default", default_partition))
register_combiner(CombinerFn("sum", _fold_ints(lambda x, y: x + y)))
register_combiner(CombinerFn("min", _fold_ints(min)))
register_combiner(CombinerFn("max", _fold_ints(max)))


# --- Buffer operations (COMB / PART) ---

def combine_buffer(buf: Iterable[Message], comb: CombinerFn) -> MessageBuffer:
    """
    Folds every equal-key group of messages into one message.

    Distinct keys keep their first-occurrence order.

    Args:
        buf: Messages to combine.
        comb: The combiner to fold with.

    Returns:
        A new buffer with one message per distinct key.
    """
    folded: Dict[bytes, Message] = {}
    for msg in buf:
        prev = folded.get(msg.key)
        folded[msg.key] = msg if prev is None else comb.eval(prev, msg)
    return MessageBuffer(folded.values())


def partition_buffer(buf: Iterable[Message], dsts: Sequence, part: PartitionFn) -> Dict:
    """
    Splits a buffer across destinations.

    Args:
        buf: Messages to partition.
        dsts: Destination list; every entry gets a (possibly empty) buffer.
        part: The partition function.

    Returns:
        Destination -> buffer map in destination-list order. Within each
        buffer the input order is preserved.

    Raises:
        InvalidArgumentError: If dsts is empty.
        PlanError: If the partition function returns an out-of-range index.
    """
    if len(dsts) == 0:
        raise InvalidArgumentError("destination list must not be empty")
    slots = [MessageBuffer() for _ in dsts]
    for msg in buf:
        idx = part.eval(msg, dsts)
        if not 0 <= idx < len(slots):
            raise PlanError(f"partition function '{part.id}' returned index {idx} "
                            f"for {len(slots)} destinations")
        slots[idx].append(msg)
    return {d: slots[i] for i, d in enumerate(dsts)}
