"""Wire protocol for remote epsilon-prediction.

TCP, little-endian. Frame = magic "SDS1" | type u8 | payload length u64 |
payload. Types: 1 eps request, 2 eps response, 3 hello, 4 error.
Tensors travel as u32 ndim | u64 dims[] | f32 data (row-major).
"""

import struct

import numpy as np

from .errors import ScorerError

MAGIC = b"SDS1"
TYPE_EPS_REQUEST = 1
TYPE_EPS_RESPONSE = 2
TYPE_HELLO = 3
TYPE_ERROR = 4

MAX_PAYLOAD = 1 << 31  # sanity bound against garbage length fields


def encode_frame(ftype: int, payload: bytes) -> bytes:
    return MAGIC + struct.pack("<BQ", ftype, len(payload)) + payload


def read_exact(reader, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = reader.read(n - got)
        if not chunk:
            raise ScorerError("connection closed mid-frame", retryable=False)
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(reader):
    header = read_exact(reader, 13)
    if header[:4] != MAGIC:
        raise ScorerError(f"bad magic {header[:4]!r}", retryable=False)
    ftype, length = struct.unpack("<BQ", header[4:])
    if length > MAX_PAYLOAD:
        raise ScorerError(f"payload length {length} exceeds limit", retryable=False)
    return ftype, read_exact(reader, length)


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    return (struct.pack("<I", arr.ndim)
            + struct.pack(f"<{arr.ndim}Q", *arr.shape)
            + arr.tobytes())


def decode_tensor(buf: bytes, offset: int = 0):
    if offset + 4 > len(buf):
        raise ScorerError("truncated tensor header")
    (ndim,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if ndim > 8:
        raise ScorerError(f"implausible tensor rank {ndim}")
    if offset + 8 * ndim > len(buf):
        raise ScorerError("truncated tensor dims")
    dims = struct.unpack_from(f"<{ndim}Q", buf, offset)
    offset += 8 * ndim
    count = int(np.prod(dims)) if ndim else 1
    nbytes = 4 * count
    if offset + nbytes > len(buf):
        raise ScorerError("tensor payload shorter than header promises")
    arr = np.frombuffer(buf, np.float32, count=count, offset=offset).reshape(dims)
    return arr.copy(), offset + nbytes


def encode_eps_request(x_t, t_or_step: float, prompt: str, cond=None,
                       guidance: float = 1.0, seed: int = 0) -> bytes:
    prompt_raw = prompt.encode("utf-8")
    parts = [
        encode_tensor(x_t),
        struct.pack("<f", float(t_or_step)),
        struct.pack("<I", len(prompt_raw)), prompt_raw,
    ]
    if cond is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.append(encode_tensor(cond))
    parts.append(struct.pack("<f", float(guidance)))
    parts.append(struct.pack("<Q", int(seed)))
    return b"".join(parts)


def decode_eps_request(payload: bytes) -> dict:
    x_t, off = decode_tensor(payload)
    (t_or_step,) = struct.unpack_from("<f", payload, off)
    off += 4
    (plen,) = struct.unpack_from("<I", payload, off)
    off += 4
    prompt = payload[off:off + plen].decode("utf-8")
    off += plen
    (has_cond,) = struct.unpack_from("<B", payload, off)
    off += 1
    cond = None
    if has_cond:
        cond, off = decode_tensor(payload, off)
    (guidance,) = struct.unpack_from("<f", payload, off)
    off += 4
    (seed,) = struct.unpack_from("<Q", payload, off)
    off += 8
    if off != len(payload):
        raise ScorerError("eps request has trailing bytes")
    return {"x_t": x_t, "t_or_step": t_or_step, "prompt": prompt,
            "cond": cond, "guidance": guidance, "seed": seed}


def encode_hello_response(model_name: str, alphas, max_h: int, max_w: int) -> bytes:
    name_raw = model_name.encode("utf-8")
    alphas = np.ascontiguousarray(alphas, dtype=np.float32)
    return (struct.pack("<I", len(name_raw)) + name_raw
            + struct.pack("<I", len(alphas)) + alphas.tobytes()
            + struct.pack("<II", max_h, max_w))


def decode_hello_response(payload: bytes) -> dict:
    (nlen,) = struct.unpack_from("<I", payload, 0)
    off = 4
    name = payload[off:off + nlen].decode("utf-8")
    off += nlen
    (alen,) = struct.unpack_from("<I", payload, off)
    off += 4
    alphas = np.frombuffer(payload, np.float32, count=alen, offset=off).copy()
    off += 4 * alen
    max_h, max_w = struct.unpack_from("<II", payload, off)
    return {"model_name": name, "alphas": alphas, "max_h": max_h, "max_w": max_w}


def encode_error(message: str) -> bytes:
    return message.encode("utf-8")


def decode_error(payload: bytes) -> str:
    return payload.decode("utf-8", errors="replace")
