"""Host a trained checkpoint as a Stop/Go policy service.

The simulator connects out once per episode, handshakes with ``hello``,
then streams ``decide`` requests; replies are greedy argmax actions.
"""

from __future__ import annotations

import socketserver
from pathlib import Path

import numpy as np
import torch

from .client import ACTIONS
from .model import load_checkpoint
from .protocol import ProtocolError, parse_endpoint, recv_message, send_message


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        model = self.server.model  # type: ignore[attr-defined]
        try:
            while True:
                try:
                    msg = recv_message(self.rfile)
                except ProtocolError:
                    return  # hangup or garbage: drop the connection
                kind = msg.get("type")
                if kind == "hello":
                    if int(msg.get("obs_dim", -1)) != model.obs_dim:
                        send_message(self.wfile, {
                            "type": "error",
                            "message": f"checkpoint expects obs_dim={model.obs_dim}",
                            "field": "obs_dim",
                        })
                        return
                    send_message(self.wfile, {"type": "ready"})
                elif kind == "decide":
                    send_message(self.wfile, {
                        "type": "act",
                        "actions": _decide(model, msg.get("obs", {})),
                    })
                elif kind == "close":
                    return
                else:
                    send_message(self.wfile, {
                        "type": "error",
                        "message": f"unexpected message type {kind!r}",
                        "field": "type",
                    })
                    return
        except (BrokenPipeError, ConnectionResetError):
            return


def _decide(model, raw_obs: dict) -> dict[str, str]:
    if not raw_obs:
        return {}
    vids = sorted(raw_obs, key=int)
    stack = np.stack([np.asarray(raw_obs[v], dtype=np.float32) for v in vids])
    with torch.no_grad():
        picks = model(torch.from_numpy(stack)).argmax(dim=1).tolist()
    return {v: ACTIONS[int(a)] for v, a in zip(vids, picks)}


class PolicyServer:
    """TCP server around one loaded checkpoint; handles episodes in turn."""

    def __init__(self, listen: str, checkpoint: str | Path):
        host, port = parse_endpoint(listen)
        model, _meta = load_checkpoint(checkpoint)

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = _Server((host, port), _Handler)
        self._server.model = model  # type: ignore[attr-defined]
        self._looping = False

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def serve_forever(self) -> None:
        self._looping = True
        try:
            self._server.serve_forever()
        finally:
            self._looping = False

    def shutdown(self) -> None:
        # TCPServer.shutdown blocks forever unless serve_forever is running
        if self._looping:
            self._server.shutdown()
        self._server.server_close()
