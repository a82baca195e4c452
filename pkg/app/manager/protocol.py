"""
Manager wire protocol: 4-byte big-endian length prefix + UTF-8 JSON object.

Requests carry an "op" field; responses carry "ok" and either the result
fields or {"err": <code>, "detail": <message>}.
"""

import json
import logging
import socket
import struct
from typing import Optional

from app.manager.store import ShuffleManager
from app.shuffle.errors import ProtocolError, TeShuError

logger = logging.getLogger('manager_protocol')

LENGTH = struct.Struct(">I")
MAX_FRAME = 16 * 1024 * 1024


def encode_frame(message: dict) -> bytes:
    payload = json.dumps(message, sort_keys=True).encode("utf-8")
    return LENGTH.pack(len(payload)) + payload


def decode_payload(payload: bytes) -> dict:
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(f"malformed frame: {e}") from e
    if not isinstance(message, dict):
        raise ProtocolError("frame must hold a JSON object")
    return message


def frame_length(header: bytes) -> int:
    (length,) = LENGTH.unpack(header)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds {MAX_FRAME}")
    return length


# --- Blocking socket helpers ---

def recv_exactly(conn: socket.socket, n: int) -> Optional[bytes]:
    chunks, remaining = [], n
    while remaining:
        chunk = conn.recv(remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_message(conn: socket.socket, message: dict) -> None:
    conn.sendall(encode_frame(message))


def recv_message(conn: socket.socket) -> Optional[dict]:
    header = recv_exactly(conn, LENGTH.size)
    if header is None:
        return None
    payload = recv_exactly(conn, frame_length(header))
    if payload is None:
        raise ProtocolError("connection closed mid-frame")
    return decode_payload(payload)


# --- Request handling ---

def _field(request: dict, name: str, kind=int):
    if name not in request:
        raise ProtocolError(f"missing field {name!r}")
    try:
        return kind(request[name])
    except (TypeError, ValueError):
        raise ProtocolError(f"field {name!r} must be {kind.__name__}") from None


def error_response(error: TeShuError) -> dict:
    code = error.code if error.code in ("not_found", "protocol") else "invalid"
    return {"ok": False, "err": code, "detail": str(error)}


def dispatch(manager: ShuffleManager, request: dict) -> dict:
    """Executes one request against the manager; never raises TeShuError."""
    op = request.get("op")
    try:
        if op == "get_template":
            template = manager.get_template(_field(request, "wId"), _field(request, "shuffleId"),
                                            _field(request, "templateId", str))
            return {"ok": True, "body": template.serialize()}
        if op == "record_start":
            manager.record_start(_field(request, "wId"), _field(request, "shuffleId"),
                                 _field(request, "templateId", str))
            return {"ok": True}
        if op == "record_end":
            manager.record_end(_field(request, "wId"), _field(request, "shuffleId"))
            return {"ok": True}
        if op == "progress":
            status = manager.progress(_field(request, "shuffleId"))
            return {"ok": True, "status": {str(w): s.value for w, s in sorted(status.items())}}
        if op == "install_template":
            manager.install_template(_field(request, "templateId", str), _field(request, "body", str))
            return {"ok": True}
        if op == "list_templates":
            return {"ok": True, "templates": manager.list_templates()}
        raise ProtocolError(f"unknown op {op!r}")
    except TeShuError as e:
        logger.warning(f"request {op} failed: {e}")
        return error_response(e)
