"""Minimal OpenEXR 2.0 scanline I/O for 32-bit float images.

Writes uncompressed single-part files; reads uncompressed, ZIPS and ZIP
compression. Channel data is returned as HxWxC with RGB ordered
red-green-blue when those channels are present (EXR stores channels
alphabetically).
"""

import struct
import zlib

import numpy as np

from ..errors import AssetError

_MAGIC = 20000630
_FLOAT = 2  # pixel type

_COMPRESSION_LINES = {0: 1, 2: 1, 3: 16}  # NONE, ZIPS, ZIP


def _attr(name: str, typ: str, data: bytes) -> bytes:
    return name.encode() + b"\0" + typ.encode() + b"\0" + struct.pack("<I", len(data)) + data


def _chlist(names) -> bytes:
    out = b""
    for n in sorted(names):
        out += n.encode() + b"\0" + struct.pack("<iBBBBii", _FLOAT, 0, 0, 0, 0, 1, 1)
    return out + b"\0"


def write_exr(path, image: np.ndarray, channel_names=None):
    """Write HxWxC float32 image as an uncompressed scanline EXR."""
    image = np.ascontiguousarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    if channel_names is None:
        channel_names = {1: ["Y"], 2: ["A", "B"], 3: ["R", "G", "B"]}.get(c)
        if channel_names is None:
            channel_names = [f"C{i}" for i in range(c)]
    if len(channel_names) != c:
        raise AssetError(f"{c} channels but {len(channel_names)} names")

    order = sorted(range(c), key=lambda i: channel_names[i])
    box = struct.pack("<iiii", 0, 0, w - 1, h - 1)
    header = b"".join([
        _attr("channels", "chlist", _chlist(channel_names)),
        _attr("compression", "compression", b"\0"),
        _attr("dataWindow", "box2i", box),
        _attr("displayWindow", "box2i", box),
        _attr("lineOrder", "lineOrder", b"\0"),
        _attr("pixelAspectRatio", "float", struct.pack("<f", 1.0)),
        _attr("screenWindowCenter", "v2f", struct.pack("<ff", 0.0, 0.0)),
        _attr("screenWindowWidth", "float", struct.pack("<f", 1.0)),
    ]) + b"\0"

    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", _MAGIC, 2))
        fh.write(header)
        table_pos = fh.tell()
        fh.write(b"\0" * 8 * h)
        offsets = []
        line_bytes = w * 4 * c
        for y in range(h):
            offsets.append(fh.tell())
            fh.write(struct.pack("<ii", y, line_bytes))
            for i in order:
                fh.write(image[y, :, i].tobytes())
        fh.seek(table_pos)
        fh.write(struct.pack(f"<{h}Q", *offsets))


def _read_nullterm(fh):
    out = b""
    while True:
        b = fh.read(1)
        if b == b"":
            raise AssetError("truncated EXR header")
        if b == b"\0":
            return out.decode("latin-1")
        out += b


def _unpredict(data: bytes) -> bytes:
    """Invert the EXR zip pre-filter: byte delta coding, then deinterleave.

    The sequential recurrence d[i] = (d[i] + d[i-1] - 128) mod 256 has the
    closed form (cumsum(raw) - 128*i) mod 256.
    """
    raw = np.frombuffer(data, np.uint8).astype(np.int64)
    vals = (np.cumsum(raw) - 128 * np.arange(len(raw))) & 0xFF
    out = vals.astype(np.uint8)
    half = (len(out) + 1) // 2
    result = np.empty(len(out), dtype=np.uint8)
    result[0::2] = out[:half]
    result[1::2] = out[half:]
    return result.tobytes()


def read_exr(path):
    """Read a float scanline EXR; returns (HxWxC float32, channel names)."""
    with open(path, "rb") as fh:
        magic, version = struct.unpack("<ii", fh.read(8))
        if magic != _MAGIC:
            raise AssetError("not an EXR file (bad magic)")
        if version & 0x200:
            raise AssetError("multi-part EXR not supported")

        channels = None
        compression = None
        data_window = None
        while True:
            name = _read_nullterm(fh)
            if name == "":
                break
            typ = _read_nullterm(fh)
            size = struct.unpack("<I", fh.read(4))[0]
            data = fh.read(size)
            if name == "channels":
                channels = _parse_chlist(data)
            elif name == "compression":
                compression = data[0]
            elif name == "dataWindow":
                data_window = struct.unpack("<iiii", data)
        if channels is None or compression is None or data_window is None:
            raise AssetError("EXR header missing required attributes")
        if compression not in _COMPRESSION_LINES:
            raise AssetError(f"unsupported EXR compression {compression}")
        x0, y0, x1, y1 = data_window
        w, h = x1 - x0 + 1, y1 - y0 + 1
        lines_per_block = _COMPRESSION_LINES[compression]
        n_blocks = (h + lines_per_block - 1) // lines_per_block
        offsets = struct.unpack(f"<{n_blocks}Q", fh.read(8 * n_blocks))

        names = [c[0] for c in channels]
        for _, ptype in channels:
            if ptype != _FLOAT:
                raise AssetError("only 32-bit float EXR channels supported")
        c = len(names)
        img = np.empty((h, w, c), dtype=np.float32)
        for off in offsets:
            fh.seek(off)
            y, nbytes = struct.unpack("<ii", fh.read(8))
            raw = fh.read(nbytes)
            n_lines = min(lines_per_block, y1 - y + 1)
            expect = w * 4 * c * n_lines
            if compression in (2, 3):
                raw = zlib.decompress(raw)
                if len(raw) != expect:
                    raise AssetError("EXR zip block has wrong size")
                raw = _unpredict(raw)
            elif len(raw) != expect:
                raise AssetError("EXR scanline block has wrong size")
            block = np.frombuffer(raw, np.float32).reshape(n_lines, c, w)
            img[y - y0:y - y0 + n_lines] = block.transpose(0, 2, 1)

    # reorder alphabetical -> conventional
    if set(names) == {"R", "G", "B"}:
        perm = [names.index(k) for k in ("R", "G", "B")]
        img = img[:, :, perm]
        names = ["R", "G", "B"]
    return img, names


def _parse_chlist(data):
    channels = []
    pos = 0
    while data[pos] != 0:
        end = data.index(b"\0", pos)
        name = data[pos:end].decode("latin-1")
        ptype = struct.unpack_from("<i", data, end + 1)[0]
        channels.append((name, ptype))
        pos = end + 1 + 16
    return channels
