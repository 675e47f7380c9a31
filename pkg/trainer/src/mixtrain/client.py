"""Environment service client: drives seeded episodes over the wire."""

from __future__ import annotations

import socket
from dataclasses import dataclass

import numpy as np

from .protocol import ProtocolError, parse_endpoint, recv_message, send_message

ACTIONS = ("Stop", "Go")  # index = network output column


@dataclass
class Transition:
    """One environment reply."""

    t: float
    obs: dict[int, np.ndarray]
    rewards: dict[int, float]
    done: bool
    info: dict


def _decode_obs(raw: dict) -> dict[int, np.ndarray]:
    out: dict[int, np.ndarray] = {}
    for key, vec in raw.items():
        out[int(key)] = np.asarray(vec, dtype=np.float32)
    return out


class EnvClient:
    """One connection to `serve`; one episode at a time."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        host, port = parse_endpoint(endpoint)
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.settimeout(timeout)
        self._rfile = self._sock.makefile("rb")
        self._wfile = self._sock.makefile("wb")
        self.obs_dim: int | None = None

    def _call(self, msg: dict) -> dict:
        send_message(self._wfile, msg)
        reply = recv_message(self._rfile)
        if reply.get("type") == "error":
            raise ProtocolError(
                f"environment rejected {msg.get('type')!r}: {reply.get('message')}",
                raw=str(reply),
            )
        return reply

    def reset(
        self,
        scenario: str,
        seed: int,
        rv_rate: float,
        horizon: int,
        warmup: float = 0.0,
        action_interval: int = 1,
    ) -> dict[int, np.ndarray]:
        reply = self._call({
            "type": "reset", "scenario": scenario, "seed": seed,
            "rv_rate": rv_rate, "horizon": horizon, "warmup": warmup,
            "action_interval": action_interval,
        })
        if reply.get("type") != "obs":
            raise ProtocolError(f"expected obs after reset, got {reply.get('type')!r}",
                                raw=str(reply))
        self.obs_dim = int(reply["obs_dim"])
        return _decode_obs(reply["obs"])

    def act(self, actions: dict[int, str]) -> Transition:
        for a in actions.values():
            if a not in ACTIONS:
                raise ValueError(f"illegal action token {a!r}")
        reply = self._call({
            "type": "act",
            "actions": {str(vid): a for vid, a in actions.items()},
        })
        if reply.get("type") != "transition":
            raise ProtocolError(f"expected transition, got {reply.get('type')!r}",
                                raw=str(reply))
        return Transition(
            t=float(reply["t"]),
            obs=_decode_obs(reply["obs"]),
            rewards={int(k): float(v) for k, v in reply.get("rewards", {}).items()},
            done=bool(reply["done"]),
            info=reply.get("info", {}),
        )

    def close(self) -> None:
        try:
            send_message(self._wfile, {"type": "close"})
            recv_message(self._rfile)
        except (ProtocolError, OSError):
            pass
        self._sock.close()

    def __enter__(self) -> "EnvClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
