"""
Channels between worker tasks.

Each (shuffleId, tag, src, dst) key owns an unbounded FIFO; SEND enqueues
and returns, RECV blocks until the FIFO is non-empty. Pull-mode slots hold a
sender's published partition for one receiver and can be fetched once.

The fabric is shared by every worker task of one shuffle. It is used either
by the cooperative scheduler (one thread, polling `ready`/`take`) or by the
parallel scheduler (one thread per worker, blocking in `wait_for`), and
detects deadlock in both modes.
"""

import logging
import threading
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Dict, Optional, Set, Tuple

from app.shuffle.core import MessageBuffer
from app.shuffle.errors import DeadlockError, PlanError, TeShuError

logger = logging.getLogger("shuffle_channels")

CONTROL_FIELD_BYTES = 8
DATA_TAG = "data"


@dataclass(frozen=True)
class Packet:
    """Channel payload: a message buffer plus optional numeric control fields."""

    buffer: MessageBuffer
    control: Tuple[float, ...] = ()

    @property
    def size(self) -> int:
        return self.buffer.total_bytes + CONTROL_FIELD_BYTES * len(self.control)


@dataclass(frozen=True)
class Wait:
    """A blocking request a worker task yields to its scheduler."""

    kind: str  # "recv" or "fetch"
    src: int
    dst: int
    tag: str = DATA_TAG

    def describe(self) -> str:
        if self.kind == "fetch":
            return f"FETCH from {self.src}"
        suffix = "" if self.tag == DATA_TAG else f" [{self.tag}]"
        return f"RECV from {self.src}{suffix}"


_FETCHED = object()


class Fabric:
    """Channels, pull slots and deadlock bookkeeping for one shuffle."""

    def __init__(self, shuffle_id: int):
        self.shuffle_id = shuffle_id
        self._cond = threading.Condition()
        self._channels: Dict[tuple, deque] = defaultdict(deque)
        self._slots: Dict[Tuple[int, int], object] = {}
        self._waiting: Dict[int, Wait] = {}
        self._live: Set[int] = set()
        self.failure: Optional[TeShuError] = None

    # --- Producer side ---

    def put(self, src: int, dst: int, packet: Packet, tag: str = DATA_TAG) -> None:
        with self._cond:
            self._channels[(self.shuffle_id, tag, src, dst)].append(packet)
            self._cond.notify_all()

    def publish(self, src: int, dst: int, buf: MessageBuffer) -> None:
        with self._cond:
            if (src, dst) in self._slots:
                raise PlanError(f"partition for {dst} already published by {src}")
            self._slots[(src, dst)] = buf
            self._cond.notify_all()

    # --- Consumer side ---

    def _ready(self, wait: Wait) -> bool:
        if wait.kind == "fetch":
            slot = self._slots.get((wait.src, wait.dst))
            if slot is _FETCHED:
                raise PlanError(f"slot ({wait.src} -> {wait.dst}) fetched twice")
            return slot is not None
        return bool(self._channels.get((self.shuffle_id, wait.tag, wait.src, wait.dst)))

    def _take(self, wait: Wait) -> Packet:
        if wait.kind == "fetch":
            buf = self._slots[(wait.src, wait.dst)]
            self._slots[(wait.src, wait.dst)] = _FETCHED
            return Packet(buf)
        return self._channels[(self.shuffle_id, wait.tag, wait.src, wait.dst)].popleft()

    def ready(self, wait: Wait) -> bool:
        with self._cond:
            return self._ready(wait)

    def take(self, wait: Wait) -> Packet:
        with self._cond:
            return self._take(wait)

    # --- Parallel mode ---

    def register(self, worker: int) -> None:
        with self._cond:
            self._live.add(worker)

    def finish(self, worker: int, error: Optional[TeShuError] = None) -> None:
        with self._cond:
            self._live.discard(worker)
            self._waiting.pop(worker, None)
            if error is not None and self.failure is None:
                self.failure = error
            self._check_deadlock()
            self._cond.notify_all()

    def _check_deadlock(self) -> None:
        if self.failure is not None or not self._live:
            return
        if set(self._waiting) != self._live:
            return
        if any(self._ready(w) for w in self._waiting.values()):
            return
        self.failure = DeadlockError({w: wait.describe() for w, wait in self._waiting.items()})
        logger.error(str(self.failure))

    def wait_for(self, worker: int, wait: Wait) -> Packet:
        """Blocks the calling thread until `wait` can be satisfied."""
        with self._cond:
            try:
                while not self._ready(wait):
                    if self.failure is not None:
                        raise self.failure
                    self._waiting[worker] = wait
                    self._check_deadlock()
                    if self.failure is not None:
                        self._cond.notify_all()
                        raise self.failure
                    self._cond.wait()
                return self._take(wait)
            finally:
                self._waiting.pop(worker, None)
