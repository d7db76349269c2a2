"""Threaded TCP server answering hello and eps-request frames.

Connections are handled concurrently; forward passes are serialized
through a per-server lock so a single model instance never sees two
requests at once. Malformed frames get an error frame and the connection
closes; model-level errors get an error frame and the connection stays
usable.
"""

import socket
import threading

from . import protocol


class ScoreServer:
    def __init__(self, model, host="0.0.0.0", port=7431):
        self.model = model
        self.host = host
        self.port = port
        self._model_lock = threading.Lock()
        self._sock = None
        self._stop = threading.Event()

    # -- lifecycle -----------------------------------------------------------

    def bind(self):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((self.host, self.port))
        self._sock.listen(16)
        self.port = self._sock.getsockname()[1]
        return self

    def serve_forever(self):
        if self._sock is None:
            self.bind()
        print(f"serving {self.model.name} on {self.host}:{self.port} "
              f"(schedule {len(self.model.alphas)} steps, "
              f"max {self.model.max_h}x{self.model.max_w})")
        while not self._stop.is_set():
            try:
                conn, addr = self._sock.accept()
            except OSError:
                break
            threading.Thread(target=self._handle, args=(conn,), daemon=True).start()

    def start_background(self):
        self.bind()
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread

    def stop(self):
        self._stop.set()
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass

    # -- request handling ------------------------------------------------------

    def _handle(self, conn):
        with conn:
            while True:
                try:
                    ftype, payload = protocol.recv_frame(conn)
                except protocol.ProtocolViolation as exc:
                    self._safe_send(conn, protocol.frame(protocol.ERROR, str(exc).encode()))
                    return
                except (ConnectionError, OSError):
                    return

                try:
                    if ftype == protocol.HELLO:
                        reply = protocol.frame(protocol.HELLO, protocol.pack_hello(
                            self.model.name, self.model.alphas,
                            self.model.max_h, self.model.max_w))
                    elif ftype == protocol.EPS_REQUEST:
                        reply = self._answer_eps(payload)
                    else:
                        self._safe_send(conn, protocol.frame(
                            protocol.ERROR, f"unknown frame type {ftype}".encode()))
                        return
                except protocol.ProtocolViolation as exc:
                    self._safe_send(conn, protocol.frame(protocol.ERROR, str(exc).encode()))
                    return
                except Exception as exc:  # model-level failure: report, keep serving
                    reply = protocol.frame(protocol.ERROR, str(exc).encode())
                if not self._safe_send(conn, reply):
                    return

    def _answer_eps(self, payload):
        req = protocol.unpack_eps_request(payload)
        x_t = req["x_t"]
        if x_t.ndim != 3:
            raise protocol.ProtocolViolation(f"x_t must be HxWxC, got rank {x_t.ndim}")
        if x_t.shape[0] > self.model.max_h or x_t.shape[1] > self.model.max_w:
            raise ValueError(f"request {x_t.shape[:2]} exceeds limit "
                             f"{self.model.max_h}x{self.model.max_w}")
        with self._model_lock:
            eps = self.model.eps(x_t, req["t_or_step"], req["prompt"],
                                 req["cond"], req["guidance"], req["seed"])
        return protocol.frame(protocol.EPS_RESPONSE, protocol.pack_tensor(eps))

    @staticmethod
    def _safe_send(conn, data):
        try:
            conn.sendall(data)
            return True
        except OSError:
            return False


def serve(model, port=7431, host="0.0.0.0"):
    """Run until interrupted."""
    ScoreServer(model, host, port).serve_forever()


def mock_serve(port=7431, mode="zeros", target=None, host="0.0.0.0"):
    """Serve a test double: zeros or the closed-form single-image denoiser."""
    from .models import DegenerateModel, ZerosModel
    if mode == "zeros":
        model = ZerosModel()
    elif mode == "degenerate":
        if target is None:
            raise ValueError("degenerate mode needs a target image")
        model = DegenerateModel(target)
    else:
        raise ValueError(f"unknown mock mode {mode!r}")
    serve(model, port, host)
