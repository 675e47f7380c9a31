"""Client-side implementation of the environment wire protocol.

Deliberately self-contained: the trainer talks to the simulator only
through this socket seam (see PROTOCOL.md in the simulator repository),
never by importing it. Messages are newline-delimited JSON objects with
compact separators and sorted keys.
"""

from __future__ import annotations

import json
import socket


class ProtocolError(RuntimeError):
    """A malformed or unexpected message. Carries the raw offending text."""

    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message if raw is None else f"{message}; offending message: {raw!r}")
        self.raw = raw


def send_message(wfile, obj: dict) -> None:
    wfile.write((json.dumps(obj, separators=(",", ":"), sort_keys=True) + "\n").encode())
    wfile.flush()


def recv_message(rfile) -> dict:
    try:
        line = rfile.readline()
    except (TimeoutError, socket.timeout) as exc:
        raise ProtocolError("timed out waiting for a message") from exc
    if not line:
        raise ProtocolError("connection closed mid-conversation")
    text = line.decode(errors="replace").rstrip("\n")
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"message is not valid JSON: {exc}", raw=text) from exc
    if not isinstance(obj, dict) or "type" not in obj:
        raise ProtocolError("message must be a JSON object with a 'type'", raw=text)
    return obj


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)
