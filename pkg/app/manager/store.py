#!/usr/bin/env python3
"""
Shuffle manager: the template registry and the per-worker record log.

The manager stores templates by id and appends one START and one END record
per (worker, shuffle) pair. It never sees shuffle data; workers only fetch
templates from it and report progress to it.
"""

import json
import logging
import threading
import time
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from app.shuffle.errors import NotFoundError, ProtocolError
from app.shuffle.templates import Template, parse_template

logger = logging.getLogger('shuffle_manager')


class RecordKind(str, Enum):
    START = "START"
    END = "END"


class WorkerStatus(str, Enum):
    NOT_STARTED = "NOT_STARTED"
    IN_FLIGHT = "IN_FLIGHT"
    DONE = "DONE"


@dataclass(frozen=True)
class Record:
    kind: RecordKind
    w_id: int
    shuffle_id: int
    template_id: str
    seq: int
    timestamp: float  # time.monotonic(); ordered within one manager process

    def to_json(self) -> str:
        data = asdict(self)
        data["kind"] = self.kind.value
        return json.dumps(data, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Record":
        data = json.loads(line)
        data["kind"] = RecordKind(data["kind"])
        return cls(**data)


class ShuffleManager:
    """
    In-process shuffle manager. Record appends are serialized by one lock;
    template reads are plain dictionary lookups.
    """

    def __init__(self, templates: Optional[Iterable[Template]] = None, spill_path: Optional[str] = None):
        self._lock = threading.Lock()
        self._templates: Dict[str, Template] = {}
        self._records: List[Record] = []
        self._open: Dict[tuple, Record] = {}
        self._closed: set = set()
        self._spill_path = Path(spill_path) if spill_path else None
        if self._spill_path is not None:
            self._spill_path.parent.mkdir(parents=True, exist_ok=True)
        for template in templates or ():
            self._templates[template.id] = template

    # --- Templates ---

    def install_template(self, template_id: str, body: str) -> Template:
        """
        Parses and stores a template; installing an existing id replaces it.

        Raises:
            TemplateParseError: If the body does not parse.
            ProtocolError: If the body declares a different id.
        """
        template = parse_template(body)
        if template.id != template_id:
            raise ProtocolError(f"template body declares id {template.id}, not {template_id}")
        with self._lock:
            replaced = template_id in self._templates
            self._templates[template_id] = template
        logger.info(f"{'replaced' if replaced else 'installed'} template {template_id}")
        return template

    def list_templates(self) -> List[str]:
        return sorted(self._templates)

    def template(self, template_id: str) -> Template:
        try:
            return self._templates[template_id]
        except KeyError:
            raise NotFoundError(f"unknown template: {template_id}") from None

    def get_template(self, w_id: int, shuffle_id: int, template_id: str) -> Template:
        """
        Returns the template and records START for (w_id, shuffle_id).

        Raises:
            NotFoundError: Unknown template id; nothing is recorded.
            ProtocolError: START already recorded for this worker and shuffle.
        """
        template = self.template(template_id)
        self.record_start(w_id, shuffle_id, template_id)
        return template

    # --- Records ---

    def _append(self, kind: RecordKind, w_id: int, shuffle_id: int, template_id: str) -> Record:
        record = Record(kind, int(w_id), int(shuffle_id), template_id, len(self._records), time.monotonic())
        self._records.append(record)
        if self._spill_path is not None:
            with open(self._spill_path, "a", encoding="utf-8") as spill:
                spill.write(record.to_json() + "\n")
        logger.debug(f"record {kind.value} worker={w_id} shuffle={shuffle_id} template={template_id}")
        return record

    def record_start(self, w_id: int, shuffle_id: int, template_id: str) -> Record:
        key = (int(w_id), int(shuffle_id))
        with self._lock:
            if key in self._open or key in self._closed:
                raise ProtocolError(f"duplicate START for worker {w_id}, shuffle {shuffle_id}")
            record = self._append(RecordKind.START, w_id, shuffle_id, template_id)
            self._open[key] = record
        return record

    def record_end(self, w_id: int, shuffle_id: int) -> Record:
        """
        Raises:
            ProtocolError: No open START for (w_id, shuffle_id).
        """
        key = (int(w_id), int(shuffle_id))
        with self._lock:
            start = self._open.pop(key, None)
            if start is None:
                raise ProtocolError(f"END without START for worker {w_id}, shuffle {shuffle_id}")
            self._closed.add(key)
            return self._append(RecordKind.END, w_id, shuffle_id, start.template_id)

    def records(self, shuffle_id: Optional[int] = None) -> List[Record]:
        with self._lock:
            return [r for r in self._records if shuffle_id is None or r.shuffle_id == shuffle_id]

    def record_counts(self, shuffle_id: Optional[int] = None) -> Dict[str, int]:
        counts = {RecordKind.START.value: 0, RecordKind.END.value: 0}
        for r in self.records(shuffle_id):
            counts[r.kind.value] += 1
        return counts

    def progress(self, shuffle_id: int, workers: Optional[Iterable[int]] = None) -> Dict[int, WorkerStatus]:
        """
        Per-worker status derived from the records of one shuffle.

        Workers listed in `workers` with no records are NOT_STARTED; an
        unknown shuffle id with no worker list gives an empty map.
        """
        status = {int(w): WorkerStatus.NOT_STARTED for w in workers or ()}
        for r in self.records(shuffle_id):
            status[r.w_id] = WorkerStatus.IN_FLIGHT if r.kind == RecordKind.START else WorkerStatus.DONE
        return status

    @staticmethod
    def load_records(path) -> List[Record]:
        """Reads a JSON-lines spill file back into records."""
        with open(path, encoding="utf-8") as spill:
            return [Record.from_json(line) for line in spill if line.strip()]
