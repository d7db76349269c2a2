"""Server tests with a raw-socket client written against the byte layout."""

import socket
import struct
import threading
import time

import numpy as np
import pytest

from sds_score_server.models import DegenerateModel, ZerosModel, cosine_alpha_table
from sds_score_server.protocol import pack_tensor, unpack_tensor
from sds_score_server.server import ScoreServer


def client_frame(ftype, payload):
    return b"SDS1" + struct.pack("<BQ", ftype, len(payload)) + payload


def client_read_frame(sock):
    buf = b""
    while len(buf) < 13:
        chunk = sock.recv(13 - len(buf))
        if not chunk:
            return None, None
        buf += chunk
    assert buf[:4] == b"SDS1"
    ftype, length = struct.unpack("<BQ", buf[4:])
    payload = b""
    while len(payload) < length:
        chunk = sock.recv(length - len(payload))
        if not chunk:
            return None, None
        payload += chunk
    return ftype, payload


def client_tensor(arr):
    arr = np.ascontiguousarray(arr, np.float32)
    return struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape) + arr.tobytes()


def client_eps_request(x_t, step, prompt=b"", cond=None, guidance=1.0, seed=0):
    payload = client_tensor(x_t) + struct.pack("<f", step)
    payload += struct.pack("<I", len(prompt)) + prompt
    if cond is None:
        payload += struct.pack("<B", 0)
    else:
        payload += struct.pack("<B", 1) + client_tensor(cond)
    payload += struct.pack("<f", guidance) + struct.pack("<Q", seed)
    return client_frame(1, payload)


def parse_hello(payload):
    (nlen,) = struct.unpack_from("<I", payload, 0)
    off = 4
    name = payload[off:off + nlen].decode()
    off += nlen
    (alen,) = struct.unpack_from("<I", payload, off)
    off += 4
    alphas = np.frombuffer(payload, np.float32, count=alen, offset=off)
    off += 4 * alen
    max_h, max_w = struct.unpack_from("<II", payload, off)
    return name, alphas, max_h, max_w


@pytest.fixture()
def zeros_server():
    server = ScoreServer(ZerosModel(), host="127.0.0.1", port=0)
    server.start_background()
    yield server
    server.stop()


@pytest.fixture()
def degenerate_server():
    target = np.random.default_rng(0).uniform(0, 1, (16, 16, 3)).astype(np.float32)
    server = ScoreServer(DegenerateModel(target), host="127.0.0.1", port=0)
    server.start_background()
    yield server, target
    server.stop()


def connect(server):
    return socket.create_connection(("127.0.0.1", server.port), timeout=5)


def test_tensor_roundtrip_bytes_exact():
    arr = np.random.default_rng(1).normal(size=(3, 5, 2)).astype(np.float32)
    back, off = unpack_tensor(pack_tensor(arr))
    assert off == len(pack_tensor(arr))
    np.testing.assert_array_equal(back, arr)
    assert back.tobytes() == arr.tobytes()


def test_hello_schedule_non_increasing(zeros_server):
    with connect(zeros_server) as sock:
        sock.sendall(client_frame(3, b""))
        ftype, payload = client_read_frame(sock)
        assert ftype == 3
        name, alphas, max_h, max_w = parse_hello(payload)
        assert name == "mock-zeros"
        assert np.all(np.diff(alphas) <= 1e-9)
        assert max_h >= 64 and max_w >= 64


def test_zeros_mode_any_request(zeros_server):
    x_t = np.random.default_rng(2).normal(size=(8, 8, 3)).astype(np.float32)
    with connect(zeros_server) as sock:
        sock.sendall(client_eps_request(x_t, 10.0))
        ftype, payload = client_read_frame(sock)
        assert ftype == 2
        eps, _ = unpack_tensor(payload)
        assert eps.shape == x_t.shape
        np.testing.assert_array_equal(eps, 0.0)


def test_degenerate_zero_target_formula():
    server = ScoreServer(DegenerateModel(np.zeros((4, 4, 3))), host="127.0.0.1", port=0)
    server.start_background()
    try:
        x_t = np.random.default_rng(3).normal(size=(4, 4, 3)).astype(np.float32)
        step = 400
        with connect(server) as sock:
            sock.sendall(client_eps_request(x_t, float(step)))
            ftype, payload = client_read_frame(sock)
            assert ftype == 2
            eps, _ = unpack_tensor(payload)
        a = cosine_alpha_table(1000)[step]
        np.testing.assert_allclose(eps, x_t / np.sqrt(1 - a), rtol=1e-5)
    finally:
        server.stop()


def test_degenerate_recovery_over_wire(degenerate_server):
    # client-side one-step reconstruction returns the configured target
    server, target = degenerate_server
    rng = np.random.default_rng(4)
    alphas = cosine_alpha_table(1000)
    with connect(server) as sock:
        for step in (50, 500, 950):
            a = float(alphas[step])
            eps_true = rng.normal(size=target.shape)
            x_t = (np.sqrt(a) * target + np.sqrt(1 - a) * eps_true).astype(np.float32)
            sock.sendall(client_eps_request(x_t, float(step)))
            ftype, payload = client_read_frame(sock)
            assert ftype == 2
            eps, _ = unpack_tensor(payload)
            x0_hat = (x_t - np.sqrt(1 - a) * eps.astype(np.float64)) / np.sqrt(a)
            assert np.abs(x0_hat - target).max() < 1e-4
    server.stop()


def test_malformed_magic_gets_error_and_close(zeros_server):
    with connect(zeros_server) as sock:
        sock.sendall(b"XXXX" + struct.pack("<BQ", 1, 0))
        ftype, payload = client_read_frame(sock)
        assert ftype == 4
        assert b"magic" in payload
        # connection closes afterwards
        sock.settimeout(2)
        assert sock.recv(1) == b""


def test_shape_header_mismatch_gets_error(zeros_server):
    # tensor header promises 4x4x3 floats but carries only 8 bytes
    bad_tensor = struct.pack("<I", 3) + struct.pack("<QQQ", 4, 4, 3) + b"\0" * 8
    payload = bad_tensor + struct.pack("<f", 0) + struct.pack("<I", 0)
    payload += struct.pack("<B", 0) + struct.pack("<f", 1) + struct.pack("<Q", 0)
    with connect(zeros_server) as sock:
        sock.sendall(client_frame(1, payload))
        ftype, _ = client_read_frame(sock)
        assert ftype == 4


def test_model_error_keeps_connection(degenerate_server):
    server, target = degenerate_server
    with connect(server) as sock:
        # wrong shape for this target -> model error frame
        sock.sendall(client_eps_request(np.zeros((4, 4, 3), np.float32), 100.0))
        ftype, payload = client_read_frame(sock)
        assert ftype == 4
        assert b"target" in payload or b"shape" in payload
        # the same connection still answers good requests
        sock.sendall(client_eps_request(np.zeros((16, 16, 3), np.float32), 100.0))
        ftype, _ = client_read_frame(sock)
        assert ftype == 2


def test_oversized_request_rejected(zeros_server):
    big = np.zeros((2048, 4, 3), np.float32)
    with connect(zeros_server) as sock:
        sock.sendall(client_eps_request(big, 1.0))
        ftype, payload = client_read_frame(sock)
        assert ftype == 4
        assert b"limit" in payload


def test_two_concurrent_clients_complete(zeros_server):
    results = []

    def worker():
        x_t = np.zeros((32, 32, 3), np.float32)
        with connect(zeros_server) as sock:
            for _ in range(20):
                sock.sendall(client_eps_request(x_t, 5.0))
                ftype, payload = client_read_frame(sock)
                assert ftype == 2
        results.append(True)

    threads = [threading.Thread(target=worker) for _ in range(2)]
    start = time.time()
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=30)
    assert len(results) == 2
    assert time.time() - start < 30


def test_identical_requests_identical_bytes(degenerate_server):
    server, target = degenerate_server
    x_t = np.random.default_rng(5).normal(size=(16, 16, 3)).astype(np.float32)
    payloads = []
    with connect(server) as sock:
        for _ in range(2):
            sock.sendall(client_eps_request(x_t, 123.0, seed=7))
            ftype, payload = client_read_frame(sock)
            assert ftype == 2
            payloads.append(payload)
    assert payloads[0] == payloads[1]
