"""Client for remote epsilon-prediction servers.

The server owns the discrete noise schedule; the hello handshake
delivers it, and continuous t values map to the nearest step so client
and server agree on the noise scale of every request. Guidance is
applied server-side.
"""

import socket
import time

import numpy as np

from . import protocol
from .errors import ScorerError
from .score import TabulatedSchedule

DEFAULT_PORT = 7431


def parse_endpoint(spec: str):
    """'remote:HOST:PORT' or 'HOST:PORT' or 'HOST' -> (host, port)."""
    body = spec[len("remote:"):] if spec.startswith("remote:") else spec
    if ":" in body:
        host, port = body.rsplit(":", 1)
        try:
            return host, int(port)
        except ValueError:
            raise ScorerError(f"bad endpoint {spec!r}")
    return body, DEFAULT_PORT


class RemoteScoreModel:
    """Blocking request/response scorer over one TCP connection.

    `value_range` declares the server model's pixel domain; the SDS
    estimators map tone-mapped [0,1] renders into it before noising.
    Real pixel-space diffusion stages live in [-1, 1]; protocol test
    doubles usually run in [0, 1].
    """

    def __init__(self, host, port, prompt="", guidance=1.0, timeout=30.0, retries=3,
                 value_range=(-1.0, 1.0)):
        self.host = host
        self.port = port
        self.prompt = prompt
        self.guidance = float(guidance)
        self.value_range = tuple(value_range)
        self.timeout = timeout
        self.retries = retries
        self._sock = None
        self._reader = None
        self.model_name = None
        self.max_h = self.max_w = None
        self.schedule = None
        self._connect_and_hello()

    # -- connection management --------------------------------------------

    def _connect_and_hello(self):
        last = None
        for attempt in range(self.retries):
            try:
                self._sock = socket.create_connection((self.host, self.port),
                                                      timeout=self.timeout)
                self._reader = self._sock.makefile("rb")
                self._send(protocol.TYPE_HELLO, b"")
                ftype, payload = protocol.read_frame(self._reader)
                if ftype == protocol.TYPE_ERROR:
                    raise ScorerError(f"server error: {protocol.decode_error(payload)}")
                if ftype != protocol.TYPE_HELLO:
                    raise ScorerError(f"expected hello response, got frame type {ftype}")
                hello = protocol.decode_hello_response(payload)
                self.model_name = hello["model_name"]
                self.max_h, self.max_w = hello["max_h"], hello["max_w"]
                self.schedule = TabulatedSchedule(hello["alphas"])
                return
            except (OSError, ConnectionError) as exc:
                last = exc
                self.close()
                time.sleep(0.2 * (attempt + 1))
        raise ScorerError(f"cannot reach score server {self.host}:{self.port}: {last}",
                          retryable=True)

    def close(self):
        for obj in (self._reader, self._sock):
            if obj is not None:
                try:
                    obj.close()
                except OSError:
                    pass
        self._reader = self._sock = None

    def _send(self, ftype, payload):
        self._sock.sendall(protocol.encode_frame(ftype, payload))

    # -- scorer interface ---------------------------------------------------

    def eps(self, x_t, t, key=None, cond=None, guidance=None, seed=0):
        x_t = np.asarray(x_t, dtype=np.float32)
        if self.max_h and (x_t.shape[0] > self.max_h or x_t.shape[1] > self.max_w):
            raise ScorerError(f"request {x_t.shape[:2]} exceeds server limit "
                              f"{self.max_h}x{self.max_w}")
        step = self.schedule.step_for(t)
        payload = protocol.encode_eps_request(
            x_t, float(step), self.prompt, cond=cond,
            guidance=self.guidance if guidance is None else guidance, seed=seed)
        try:
            self._send(protocol.TYPE_EPS_REQUEST, payload)
            ftype, resp = protocol.read_frame(self._reader)
        except (OSError, ConnectionError) as exc:
            self.close()
            raise ScorerError(f"connection lost: {exc}", retryable=True) from exc
        if ftype == protocol.TYPE_ERROR:
            raise ScorerError(f"server error: {protocol.decode_error(resp)}")
        if ftype != protocol.TYPE_EPS_RESPONSE:
            raise ScorerError(f"unexpected frame type {ftype}")
        eps_hat, _ = protocol.decode_tensor(resp)
        if eps_hat.shape != x_t.shape:
            raise ScorerError(f"response shape {eps_hat.shape} != request {x_t.shape}")
        return eps_hat.astype(np.float64)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
