"""
Exception hierarchy for the shuffle layer.

Every error raised by the shuffle layer derives from TeShuError so callers
(CLI, manager server) can catch one type and still report a precise reason.
"""

from typing import Dict, Optional


class TeShuError(Exception):
    """Base class for all shuffle-layer errors."""

    code = "error"

    def __init__(self, message: str, worker: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.worker = worker

    def __str__(self) -> str:
        if self.worker is not None:
            return f"worker {self.worker}: {self.message}"
        return self.message


class InvalidArgumentError(TeShuError, ValueError):
    """Bad identifiers, empty destination lists, infeasible parameters."""

    code = "invalid"


class TemplateParseError(TeShuError, ValueError):
    """A template body failed to parse or validate."""

    code = "invalid"

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InstantiationError(TeShuError):
    """A template could not be bound to a shuffle call."""

    code = "invalid"


class PlanError(TeShuError):
    """A shuffle plan failed while executing."""

    code = "plan"


class DeadlockError(PlanError):
    """Every live worker is blocked on a RECV or FETCH that can never complete."""

    code = "deadlock"

    def __init__(self, wait_graph: Dict[int, str]):
        edges = ", ".join(f"{w} -> {what}" for w, what in sorted(wait_graph.items()))
        super().__init__(f"deadlock detected; blocked workers: {edges}")
        self.wait_graph = dict(wait_graph)


class NotFoundError(TeShuError):
    """Unknown template id at the shuffle manager."""

    code = "not_found"


class ProtocolError(TeShuError):
    """Record protocol violations and malformed wire frames."""

    code = "protocol"


class IngestionError(TeShuError):
    """A workload file could not be read."""

    code = "invalid"

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
