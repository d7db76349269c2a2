"""Radiance HDR (RGBE) environment maps.

Decode rule: component value = mantissa * 2^(exponent - 136); a zero
exponent byte means black. The writer emits new-style RLE scanlines when
the width allows it (8..32767) and flat RGBE rows otherwise.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import AssetError


@dataclass
class EnvironmentMap:
    radiance: np.ndarray  # HxWx3 linear, non-negative

    @property
    def height(self):
        return self.radiance.shape[0]

    @property
    def width(self):
        return self.radiance.shape[1]

    def validate(self):
        if self.radiance.ndim != 3 or self.radiance.shape[2] != 3:
            raise AssetError(f"environment map must be HxWx3, got {self.radiance.shape}")
        if not np.isfinite(self.radiance).all() or self.radiance.min() < 0:
            raise AssetError("environment radiance must be finite and non-negative")
        return self

    def rotated(self, radians: float) -> "EnvironmentMap":
        """Rotate about the vertical axis by shifting columns (nearest texel)."""
        shift = int(round(radians / (2 * np.pi) * self.width)) % self.width
        return EnvironmentMap(np.roll(self.radiance, -shift, axis=1))


def rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    rgbe = rgbe.astype(np.float32)
    e = rgbe[..., 3]
    scale = np.where(e > 0, np.exp2(e - 136.0), 0.0).astype(np.float32)
    return rgbe[..., :3] * scale[..., None]


def float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    rgb = np.maximum(rgb.astype(np.float32), 0.0)
    v = rgb.max(axis=-1)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    nz = v >= 1e-32
    if nz.any():
        _, exp = np.frexp(v[nz])
        scale = np.exp2(8.0 - exp).astype(np.float32)
        mant = np.clip(rgb[nz] * scale[:, None], 0, 255).astype(np.uint8)
        out[nz, :3] = mant
        out[nz, 3] = (exp + 128).astype(np.uint8)
    return out


def _read_header(fh):
    magic = fh.readline()
    if not magic.startswith(b"#?"):
        raise AssetError("not a Radiance HDR file (bad magic)")
    fmt_ok = False
    while True:
        line = fh.readline()
        if line == b"":
            raise AssetError("truncated HDR header")
        line = line.strip()
        if not line:
            break
        if line.startswith(b"FORMAT="):
            fmt_ok = line.split(b"=", 1)[1] in (b"32-bit_rle_rgbe", b"32-bit_rle_xyze")
    if not fmt_ok:
        raise AssetError("HDR file missing FORMAT=32-bit_rle_rgbe")
    res = fh.readline().split()
    if len(res) != 4 or res[0] != b"-Y" or res[2] != b"+X":
        raise AssetError(f"unsupported HDR resolution line {res!r}")
    return int(res[1]), int(res[3])


def _read_scanline(fh, width):
    head = fh.read(4)
    if len(head) < 4:
        raise AssetError("truncated HDR scanline")
    if head[0] == 2 and head[1] == 2 and (head[2] << 8 | head[3]) == width and width >= 8:
        row = np.empty((width, 4), dtype=np.uint8)
        for c in range(4):
            pos = 0
            while pos < width:
                count = fh.read(1)
                if not count:
                    raise AssetError("truncated HDR RLE scanline")
                count = count[0]
                if count > 128:  # run
                    run = count - 128
                    val = fh.read(1)
                    if not val or pos + run > width:
                        raise AssetError("corrupt HDR RLE run")
                    row[pos:pos + run, c] = val[0]
                    pos += run
                else:  # literals
                    data = fh.read(count)
                    if len(data) < count or pos + count > width:
                        raise AssetError("corrupt HDR RLE literals")
                    row[pos:pos + count, c] = np.frombuffer(data, np.uint8)
                    pos += count
        return row
    # flat scanline: `head` is the first pixel
    rest = fh.read(4 * (width - 1))
    if len(rest) < 4 * (width - 1):
        raise AssetError("truncated HDR flat scanline")
    return np.frombuffer(head + rest, np.uint8).reshape(width, 4)


def load_hdr(path) -> EnvironmentMap:
    with open(path, "rb") as fh:
        h, w = _read_header(fh)
        rows = [_read_scanline(fh, w) for _ in range(h)]
    rgbe = np.stack(rows)
    return EnvironmentMap(rgbe_to_float(rgbe)).validate()


def _write_rle_component(out, col):
    """Emit one component stream using runs >= 4 and literal spans."""
    n = len(col)
    pos = 0
    while pos < n:
        run_start = pos
        while run_start < n:
            run_len = 1
            while (run_start + run_len < n and run_len < 127
                   and col[run_start + run_len] == col[run_start]):
                run_len += 1
            if run_len >= 4:
                break
            run_start += 1
        lit_end = min(run_start, n)
        lit = pos
        while lit < lit_end:
            chunk = min(128, lit_end - lit)
            out.append(chunk)
            out.extend(col[lit:lit + chunk].tobytes())
            lit += chunk
        if run_start < n:
            out.append(128 + run_len)
            out.append(int(col[run_start]))
            pos = run_start + run_len
        else:
            pos = lit_end


def write_hdr(env: EnvironmentMap, path):
    env.validate()
    rgbe = float_to_rgbe(env.radiance)
    h, w = rgbe.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
        fh.write(f"-Y {h} +X {w}\n".encode())
        if 8 <= w <= 32767:
            for y in range(h):
                out = bytearray((2, 2, (w >> 8) & 0xFF, w & 0xFF))
                for c in range(4):
                    _write_rle_component(out, rgbe[y, :, c])
                fh.write(bytes(out))
        else:
            fh.write(rgbe.tobytes())
