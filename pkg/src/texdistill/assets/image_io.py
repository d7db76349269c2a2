"""8-bit PNG I/O and the sRGB transfer function.

All internal computation is linear; sRGB encoding happens only at PNG
import/export of color data.
"""

import numpy as np
from PIL import Image

from ..errors import AssetError


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    linear = np.clip(linear, 0.0, 1.0)
    return np.where(linear <= 0.0031308,
                    linear * 12.92,
                    1.055 * np.power(linear, 1.0 / 2.4) - 0.055).astype(np.float32)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    encoded = np.clip(encoded, 0.0, 1.0)
    return np.where(encoded <= 0.04045,
                    encoded / 12.92,
                    np.power((encoded + 0.055) / 1.055, 2.4)).astype(np.float32)


def to_u8(x: np.ndarray) -> np.ndarray:
    """[0,1] floats to bytes, round half up."""
    return np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_png(path, data: np.ndarray):
    """Write HxW (gray) or HxWx3 uint8 data."""
    if data.dtype != np.uint8:
        raise AssetError("save_png expects uint8 data")
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    mode = "L" if data.ndim == 2 else "RGB"
    try:
        Image.fromarray(data, mode=mode).save(path)
    except OSError as exc:
        raise AssetError(f"cannot write PNG {path}: {exc}") from exc


def load_png(path) -> np.ndarray:
    """Read a PNG as HxWxC uint8 (C=1 for grayscale)."""
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise AssetError(f"cannot read PNG {path}: {exc}") from exc
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr
