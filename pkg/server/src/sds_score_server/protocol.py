"""Wire format (server side).

Frame = magic "SDS1" | message type u8 | payload length u64 | payload,
little-endian throughout. Message types: 1 eps request, 2 eps response,
3 hello, 4 error. Tensors: u32 ndim | u64 dims[] | f32 data.
"""

import struct

import numpy as np

MAGIC = b"SDS1"
EPS_REQUEST = 1
EPS_RESPONSE = 2
HELLO = 3
ERROR = 4

MAX_PAYLOAD = 1 << 31


class ProtocolViolation(Exception):
    pass


def frame(ftype: int, payload: bytes) -> bytes:
    return MAGIC + struct.pack("<BQ", ftype, len(payload)) + payload


def recv_exact(conn, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = conn.recv(n - got)
        if not chunk:
            raise ConnectionError("peer closed")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def recv_frame(conn):
    header = recv_exact(conn, 13)
    if header[:4] != MAGIC:
        raise ProtocolViolation(f"bad magic {header[:4]!r}")
    ftype, length = struct.unpack("<BQ", header[4:])
    if length > MAX_PAYLOAD:
        raise ProtocolViolation(f"payload length {length} out of range")
    return ftype, recv_exact(conn, length)


def pack_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    return (struct.pack("<I", arr.ndim)
            + struct.pack(f"<{arr.ndim}Q", *arr.shape)
            + arr.tobytes())


def unpack_tensor(buf: bytes, offset: int = 0):
    if offset + 4 > len(buf):
        raise ProtocolViolation("truncated tensor header")
    (ndim,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if ndim > 8:
        raise ProtocolViolation(f"tensor rank {ndim} out of range")
    if offset + 8 * ndim > len(buf):
        raise ProtocolViolation("truncated tensor dims")
    dims = struct.unpack_from(f"<{ndim}Q", buf, offset)
    offset += 8 * ndim
    count = int(np.prod(dims)) if ndim else 1
    if offset + 4 * count > len(buf):
        raise ProtocolViolation("tensor data shorter than promised by dims")
    arr = np.frombuffer(buf, np.float32, count=count, offset=offset).reshape(dims)
    return arr.copy(), offset + 4 * count


def unpack_eps_request(payload: bytes) -> dict:
    x_t, off = unpack_tensor(payload)
    if off + 4 + 4 > len(payload):
        raise ProtocolViolation("truncated request")
    (t_or_step,) = struct.unpack_from("<f", payload, off)
    off += 4
    (plen,) = struct.unpack_from("<I", payload, off)
    off += 4
    if off + plen > len(payload):
        raise ProtocolViolation("truncated prompt")
    prompt = payload[off:off + plen].decode("utf-8")
    off += plen
    (has_cond,) = struct.unpack_from("<B", payload, off)
    off += 1
    cond = None
    if has_cond:
        cond, off = unpack_tensor(payload, off)
    (guidance,) = struct.unpack_from("<f", payload, off)
    off += 4
    (seed,) = struct.unpack_from("<Q", payload, off)
    off += 8
    if off != len(payload):
        raise ProtocolViolation("request has trailing bytes")
    return {"x_t": x_t, "t_or_step": float(t_or_step), "prompt": prompt,
            "cond": cond, "guidance": float(guidance), "seed": int(seed)}


def pack_hello(model_name: str, alphas, max_h: int, max_w: int) -> bytes:
    raw = model_name.encode("utf-8")
    alphas = np.ascontiguousarray(alphas, dtype=np.float32)
    return (struct.pack("<I", len(raw)) + raw
            + struct.pack("<I", len(alphas)) + alphas.tobytes()
            + struct.pack("<II", max_h, max_w))
