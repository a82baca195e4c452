"""
Manager clients used by workers.

Both clients speak the same request/response messages: the local client
dispatches them in-process, the remote client frames them over TCP.
Cached-start notifications are fire-and-forget: failures are logged and
never reach the shuffle.
"""

import logging
import socket
import threading
from abc import ABC, abstractmethod
from concurrent.futures import Future, ThreadPoolExecutor, wait
from typing import Dict, List, Optional

from app.manager.protocol import dispatch, recv_message, send_message
from app.manager.store import ShuffleManager, WorkerStatus
from app.shuffle.errors import InvalidArgumentError, NotFoundError, ProtocolError, TeShuError
from app.shuffle.templates import Template, parse_template
from app.utils import manager_address

logger = logging.getLogger('manager_client')

_ERRORS = {"not_found": NotFoundError, "protocol": ProtocolError, "invalid": InvalidArgumentError}


def raise_for_response(response: dict) -> dict:
    if response.get("ok"):
        return response
    error_type = _ERRORS.get(response.get("err"), TeShuError)
    raise error_type(response.get("detail") or response.get("err", "request failed"))


class ManagerClient(ABC):
    """Worker-side view of the shuffle manager."""

    @abstractmethod
    def request(self, message: dict) -> dict:
        """Sends one request and returns the successful response."""

    @abstractmethod
    def notify(self, message: dict) -> None:
        """Sends one request without waiting for (or failing on) its response."""

    def get_template(self, w_id: int, shuffle_id: int, template_id: str) -> Template:
        response = self.request({"op": "get_template", "wId": w_id, "shuffleId": shuffle_id,
                                 "templateId": template_id})
        return parse_template(response["body"])

    def record_start_cached(self, w_id: int, shuffle_id: int, template_id: str) -> None:
        self.notify({"op": "record_start", "wId": w_id, "shuffleId": shuffle_id, "templateId": template_id})

    def record_end(self, w_id: int, shuffle_id: int) -> None:
        self.request({"op": "record_end", "wId": w_id, "shuffleId": shuffle_id})

    def progress(self, shuffle_id: int) -> Dict[int, WorkerStatus]:
        response = self.request({"op": "progress", "shuffleId": shuffle_id})
        return {int(w): WorkerStatus(s) for w, s in response["status"].items()}

    def install_template(self, template_id: str, body: str) -> None:
        self.request({"op": "install_template", "templateId": template_id, "body": body})

    def list_templates(self) -> List[str]:
        return list(self.request({"op": "list_templates"})["templates"])

    def flush(self) -> None:
        """Waits until every notification sent so far has been delivered or dropped."""

    def close(self) -> None:
        pass


class LocalManagerClient(ManagerClient):
    """In-process client; notifications are delivered synchronously."""

    def __init__(self, manager: ShuffleManager):
        self.manager = manager

    def request(self, message: dict) -> dict:
        return raise_for_response(dispatch(self.manager, message))

    def notify(self, message: dict) -> None:
        response = dispatch(self.manager, message)
        if not response.get("ok"):
            logger.warning(f"notification {message.get('op')} rejected: {response.get('detail')}")


class RemoteManagerClient(ManagerClient):
    """
    TCP client for a standalone manager. Requests share one connection under
    a lock; notifications go through a single background thread.
    """

    def __init__(self, host: Optional[str] = None, port: Optional[int] = None, timeout: float = 5.0):
        default_host, default_port = manager_address()
        self.host = host or default_host
        self.port = port or default_port
        self.timeout = timeout
        self._lock = threading.Lock()
        self._conn: Optional[socket.socket] = None
        self._notifier = ThreadPoolExecutor(max_workers=1, thread_name_prefix="manager-notify")
        self._pending: List[Future] = []

    def _connection(self) -> socket.socket:
        if self._conn is None:
            self._conn = socket.create_connection((self.host, self.port), timeout=self.timeout)
            logger.debug(f"connected to manager at {self.host}:{self.port}")
        return self._conn

    def _roundtrip(self, message: dict) -> dict:
        with self._lock:
            try:
                conn = self._connection()
                send_message(conn, message)
                response = recv_message(conn)
            except OSError:
                self._drop_connection()
                raise
            if response is None:
                self._drop_connection()
                raise ProtocolError("manager closed the connection")
            return response

    def _drop_connection(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def request(self, message: dict) -> dict:
        return raise_for_response(self._roundtrip(message))

    def _deliver(self, message: dict) -> None:
        try:
            response = self._roundtrip(message)
        except (OSError, TeShuError) as e:
            logger.warning(f"notification {message.get('op')} not delivered: {e}")
            return
        if not response.get("ok"):
            logger.warning(f"notification {message.get('op')} rejected: {response.get('detail')}")

    def notify(self, message: dict) -> None:
        self._pending.append(self._notifier.submit(self._deliver, message))

    def flush(self) -> None:
        pending, self._pending = self._pending, []
        wait(pending)

    def close(self) -> None:
        self.flush()
        self._notifier.shutdown(wait=True)
        with self._lock:
            self._drop_connection()
