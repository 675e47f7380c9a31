"""Line-delimited JSON wire protocol over TCP.

Two services share the same framing (one JSON object per ``\\n``-terminated
line, UTF-8, vehicle ids as decimal-string object keys):

* the environment service (``mixsim serve``): a training client drives
  episodes with ``reset``/``act`` and receives ``obs``/``transition``;
* the policy service (``--policy external:HOST:PORT``): the simulator asks
  a remote policy for Stop/Go decisions with ``hello``/``decide``.

PROTOCOL.md in the repository root documents every message bit-exactly;
this module is the reference implementation of both endpoints mixsim owns.
"""

from __future__ import annotations

import json
import socket
import socketserver

import numpy as np

from .control import Action
from .env import EpisodeConfig, TrafficEnv
from .topology import load_scenario

DEFAULT_TIMEOUT = 5.0


class ProtocolError(RuntimeError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{message} (field: {field})")
        self.field = field


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
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"message is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or "type" not in obj:
        raise ProtocolError("message must be a JSON object with a 'type'", field="type")
    return obj


def _encode_obs(observations: dict[int, np.ndarray]) -> dict[str, list[float]]:
    return {str(vid): [float(x) for x in vec] for vid, vec in observations.items()}


# ----------------------------------------------------------------------
# environment service


class _EnvSession:
    """One client connection driving episodes."""

    def __init__(self, rfile, wfile):
        self.rfile = rfile
        self.wfile = wfile
        self.env: TrafficEnv | None = None

    def run(self) -> None:
        while True:
            try:
                msg = recv_message(self.rfile)
            except ProtocolError:
                return  # client went away
            mtype = msg.get("type")
            try:
                if mtype == "reset":
                    self._handle_reset(msg)
                elif mtype == "act":
                    self._handle_act(msg)
                elif mtype == "close":
                    send_message(self.wfile, {"type": "bye"})
                    return
                else:
                    send_message(self.wfile, {
                        "type": "error",
                        "message": f"unknown message type {mtype!r}",
                        "field": "type",
                    })
            except ProtocolError as exc:
                send_message(self.wfile, {
                    "type": "error", "message": str(exc), "field": exc.field,
                })
            except (ValueError, KeyError, RuntimeError) as exc:
                send_message(self.wfile, {"type": "error", "message": str(exc), "field": None})

    def _handle_reset(self, msg: dict) -> None:
        for key in ("scenario", "seed", "rv_rate", "horizon"):
            if key not in msg:
                raise ProtocolError("reset is missing a required field", field=key)
        network = load_scenario(msg["scenario"])
        config = EpisodeConfig(
            horizon=int(msg["horizon"]),
            warmup=float(msg.get("warmup", 0.0)),
            action_interval=int(msg.get("action_interval", 1)),
            dt=float(msg.get("dt", 1.0)),
        )
        self.env = TrafficEnv(
            network, config,
            signalized=bool(msg.get("signalized", False)),
            record_metrics=False,
        )
        obs = self.env.reset(seed=int(msg["seed"]), rv_rate=float(msg["rv_rate"]))
        send_message(self.wfile, {
            "type": "obs",
            "t": self.env.world.t,
            "obs": _encode_obs(obs),
            "obs_dim": self.env.obs_dim,
            "done": False,
        })

    def _handle_act(self, msg: dict) -> None:
        if self.env is None or self.env.world is None:
            raise ProtocolError("act before reset", field="type")
        if self.env.tick_count >= self.env.config.horizon:
            raise ProtocolError("episode is done; send reset", field="type")
        raw = msg.get("actions")
        if not isinstance(raw, dict):
            raise ProtocolError("act requires an 'actions' object", field="actions")
        actions = {}
        for key, val in raw.items():
            try:
                vid = int(key)
            except ValueError:
                raise ProtocolError(f"vehicle id {key!r} is not an integer", field="actions") from None
            try:
                actions[vid] = Action.parse(val)
            except ValueError:
                raise ProtocolError(f"bad action {val!r} for vehicle {key}", field="actions") from None
        obs, rewards, done, info = self.env.step(actions)
        send_message(self.wfile, {
            "type": "transition",
            "t": self.env.world.t,
            "obs": _encode_obs(obs),
            "rewards": {str(vid): float(r) for vid, r in rewards.items()},
            "done": bool(done),
            "info": {
                "conflict_flags": int(info["conflict_flags"]),
                "monitor_violations": int(info["monitor_violations"]),
                "crossed": [int(x) for x in info["crossed"]],
                "deferred_seconds": float(info["deferred_seconds"]),
            },
        })


class EnvServer:
    """Hosts the environment service; one client at a time.

    listen is "HOST:PORT"; port 0 binds an ephemeral port, the actual one
    is in .address.
    """

    def __init__(self, listen: str = "127.0.0.1:0"):
        host, sep, port = listen.rpartition(":")
        if not sep or not port.lstrip("-").isdigit():
            raise ValueError(f"listen address must be HOST:PORT, got {listen!r}")

        class Handler(socketserver.StreamRequestHandler):
            timeout = None

            def handle(self) -> None:
                _EnvSession(self.rfile, self.wfile).run()

        class Server(socketserver.TCPServer):
            allow_reuse_address = True

        self._server = Server((host or "127.0.0.1", int(port)), Handler)
        self.address = self._server.server_address  # (host, actual port)
        self._looping = False

    def serve_forever(self) -> None:
        self._looping = True
        try:
            self._server.serve_forever()
        finally:
            self._looping = False

    def handle_one_client(self) -> None:
        self._server.handle_request()

    def shutdown(self) -> None:
        # TCPServer.shutdown blocks forever unless serve_forever is running
        if self._looping:
            self._server.shutdown()
        self._server.server_close()


# ----------------------------------------------------------------------
# policy service client


class PolicyClient:
    """Simulator-side client of a remote Stop/Go policy."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT):
        host, sep, port = endpoint.rpartition(":")
        if not sep or not port.isdigit():
            raise ValueError(f"endpoint must be HOST:PORT, got {endpoint!r}")
        self._sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
        self._sock.settimeout(timeout)
        self._rfile = self._sock.makefile("rb")
        self._wfile = self._sock.makefile("wb")

    def hello(self, obs_dim: int) -> None:
        send_message(self._wfile, {"type": "hello", "obs_dim": int(obs_dim)})
        reply = recv_message(self._rfile)
        if reply.get("type") != "ready":
            raise ProtocolError(f"expected ready, got {reply.get('type')!r}", field="type")

    def decide(self, t: float, observations: dict[int, np.ndarray]) -> dict[int, str]:
        send_message(self._wfile, {
            "type": "decide", "t": float(t), "obs": _encode_obs(observations),
        })
        reply = recv_message(self._rfile)
        if reply.get("type") == "error":
            raise ProtocolError(f"policy error: {reply.get('message')}", field=reply.get("field"))
        if reply.get("type") != "act":
            raise ProtocolError(f"expected act, got {reply.get('type')!r}", field="type")
        raw = reply.get("actions")
        if not isinstance(raw, dict):
            raise ProtocolError("act requires an 'actions' object", field="actions")
        out: dict[int, str] = {}
        for key, val in raw.items():
            try:
                vid = int(key)
            except ValueError:
                raise ProtocolError(f"vehicle id {key!r} is not an integer", field="actions") from None
            if val not in ("Stop", "Go"):
                raise ProtocolError(f"bad action {val!r} for vehicle {key}", field="actions")
            out[vid] = val
        return out

    def close(self) -> None:
        try:
            send_message(self._wfile, {"type": "close"})
        except OSError:
            pass
        self._sock.close()
