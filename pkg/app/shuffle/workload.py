"""
Synthetic and file-backed workloads: one MessageBuffer per source worker.

Keys are `k<7 digits>` byte strings (letters for LETTER_COUNT) and values
are 8-byte integers, so every generated message has the same size.
"""

import logging
import string
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from app.shuffle.core import CombinerFn, Message, MessageBuffer, merge_buffers
from app.shuffle.errors import IngestionError, InvalidArgumentError
from app.shuffle.sampling import estimate_reduction

logger = logging.getLogger("workload")

LETTERS = string.ascii_lowercase
INT64_MIN, INT64_MAX = -(1 << 63), (1 << 63) - 1


class WorkloadKind(str, Enum):
    ZIPF = "zipf"
    UNIFORM = "uniform"
    LETTER_COUNT = "letter_count"
    DUPLICATE = "duplicate"
    FILE = "file"


# Workload-string keys -> WorkloadSpec fields
_ALIASES = {
    "n": "n_messages",
    "keys": "key_space",
    "s": "zipf_s",
    "copies": "copies",
    "local": "local_copies",
    "seed": "seed",
    "path": "path",
}


@dataclass(frozen=True)
class WorkloadSpec:
    """
    Workload parameters.

    For DUPLICATE, n_messages is the number of distinct keys and each key is
    placed on `copies` distinct workers, `local_copies` times on each; for
    the other generators it is the number of messages per worker.
    """

    kind: WorkloadKind = WorkloadKind.UNIFORM
    n_messages: int = 1000
    key_space: int = 1000
    zipf_s: float = 1.1
    copies: int = 1
    local_copies: int = 1
    seed: int = 0
    path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", WorkloadKind(self.kind))
        if self.n_messages < 0:
            raise InvalidArgumentError("n_messages must be >= 0")
        if self.key_space < 1:
            raise InvalidArgumentError("key_space must be >= 1")
        if self.kind == WorkloadKind.ZIPF and self.zipf_s <= 0:
            raise InvalidArgumentError("zipf_s must be > 0")
        if self.copies < 1:
            raise InvalidArgumentError("copies must be >= 1")
        if self.local_copies < 1:
            raise InvalidArgumentError("local_copies must be >= 1")
        if self.kind == WorkloadKind.FILE and not self.path:
            raise InvalidArgumentError("FILE workloads need a path")

    def with_seed(self, seed: int) -> "WorkloadSpec":
        return replace(self, seed=seed)

    @classmethod
    def parse(cls, text: str) -> "WorkloadSpec":
        """Parses `kind:key=value,...`, e.g. `zipf:n=1000,keys=5000,s=1.1`."""
        kind, _, rest = text.partition(":")
        try:
            kwargs = {"kind": WorkloadKind(kind.strip().lower())}
        except ValueError:
            raise InvalidArgumentError(f"unknown workload kind {kind!r}") from None
        for item in filter(None, (p.strip() for p in rest.split(","))):
            name, sep, value = item.partition("=")
            field_name = _ALIASES.get(name.strip())
            if not sep or field_name is None:
                raise InvalidArgumentError(f"bad workload option {item!r}")
            if field_name == "zipf_s":
                kwargs[field_name] = float(value)
            elif field_name == "path":
                kwargs[field_name] = value.strip()
            else:
                kwargs[field_name] = int(value)
        return cls(**kwargs)

    def describe(self) -> str:
        if self.kind == WorkloadKind.FILE:
            return f"file:path={self.path}"
        if self.kind == WorkloadKind.DUPLICATE:
            local = f",local={self.local_copies}" if self.local_copies > 1 else ""
            return f"duplicate:n={self.n_messages},copies={self.copies}{local},seed={self.seed}"
        if self.kind == WorkloadKind.ZIPF:
            return f"zipf:n={self.n_messages},keys={self.key_space},s={self.zipf_s},seed={self.seed}"
        if self.kind == WorkloadKind.LETTER_COUNT:
            return f"letter_count:n={self.n_messages},seed={self.seed}"
        return f"uniform:n={self.n_messages},keys={self.key_space},seed={self.seed}"


def key_name(i: int) -> bytes:
    return b"k%07d" % i


def zipf_weights(n: int, alpha: float) -> np.ndarray:
    """Zipfian probabilities for ranks 1..n."""
    weights = 1.0 / np.power(np.arange(1, n + 1, dtype=float), alpha)
    return weights / weights.sum()


# --- Generators ---

def _worker_rng(spec: WorkloadSpec, index: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, index])


def _from_indices(indices) -> MessageBuffer:
    return MessageBuffer(Message.of_int(key_name(int(i)), 1) for i in indices)


def _gen_duplicate(spec: WorkloadSpec, srcs: Sequence[int]) -> Dict[int, MessageBuffer]:
    copies = spec.copies
    if copies > len(srcs):
        logger.warning(f"copies={copies} exceeds {len(srcs)} workers; clamped")
        copies = len(srcs)
    rng = np.random.default_rng([spec.seed, len(srcs)])
    buffers = {w: MessageBuffer() for w in srcs}
    for k in range(spec.n_messages):
        msg = Message.of_int(key_name(k), 1)
        for idx in sorted(rng.permutation(len(srcs))[:copies]):
            buffers[srcs[idx]].extend([msg] * spec.local_copies)
    return buffers


def _read_file(path: str, srcs: Sequence[int]) -> Dict[int, MessageBuffer]:
    buffers = {w: MessageBuffer() for w in srcs}
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IngestionError(f"cannot read workload file {path}: {e}") from e
    n = 0
    for lineno, raw in enumerate(data.splitlines(), start=1):
        try:
            line = raw.decode("utf-8").strip()
        except UnicodeDecodeError as e:
            raise IngestionError(f"invalid UTF-8 at byte {e.start}", lineno) from None
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0]:
            raise IngestionError("expected '<key><TAB><integer>'", lineno)
        try:
            value = int(parts[1])
        except ValueError:
            raise IngestionError(f"value {parts[1]!r} is not an integer", lineno) from None
        if not INT64_MIN <= value <= INT64_MAX:
            raise IngestionError(f"value {parts[1]} does not fit in 64 bits", lineno)
        buffers[srcs[n % len(srcs)]].append(Message.of_int(parts[0], value))
        n += 1
    return buffers


def gen_workload(spec: WorkloadSpec, srcs: Sequence[int]) -> Dict[int, MessageBuffer]:
    """
    Generates one buffer per source worker.

    Args:
        spec: Workload parameters.
        srcs: Source workers, in order; generation depends on their positions.

    Returns:
        Worker id -> buffer. Identical for identical (spec, srcs).

    Raises:
        IngestionError: If a FILE workload cannot be read or parsed.
    """
    srcs = list(srcs)
    if not srcs:
        raise InvalidArgumentError("workload needs at least one source worker")
    if spec.kind == WorkloadKind.FILE:
        return _read_file(spec.path, srcs)
    if spec.kind == WorkloadKind.DUPLICATE:
        return _gen_duplicate(spec, srcs)

    buffers = {}
    probs = zipf_weights(spec.key_space, spec.zipf_s) if spec.kind == WorkloadKind.ZIPF else None
    for index, w in enumerate(srcs):
        rng = _worker_rng(spec, index)
        if spec.kind == WorkloadKind.LETTER_COUNT:
            picks = rng.integers(len(LETTERS), size=spec.n_messages)
            buffers[w] = MessageBuffer(Message.of_int(LETTERS[int(i)], 1) for i in picks)
        elif spec.kind == WorkloadKind.ZIPF:
            buffers[w] = _from_indices(rng.choice(spec.key_space, size=spec.n_messages, p=probs))
        else:
            buffers[w] = _from_indices(rng.integers(spec.key_space, size=spec.n_messages))
    return buffers


def true_ratio(buffers: Dict[int, MessageBuffer], comb: CombinerFn) -> float:
    """Population reduction ratio: combined bytes over raw bytes of all inputs."""
    return estimate_reduction(merge_buffers(buffers.values()), comb)
