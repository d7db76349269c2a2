"""Plain-numpy image resampling shared by score models and experiments."""

import numpy as np


def upsample_bilinear(img: np.ndarray, factor: int) -> np.ndarray:
    """Bilinear upsampling with half-texel alignment (edge-clamped)."""
    h, w = img.shape[:2]

    def axis_weights(n_out, n_in):
        x = (np.arange(n_out) + 0.5) / factor - 0.5
        i0 = np.floor(x).astype(int)
        f = x - i0
        i1 = np.clip(i0 + 1, 0, n_in - 1)
        i0 = np.clip(i0, 0, n_in - 1)
        return i0, i1, f

    r0, r1, fr = axis_weights(h * factor, h)
    c0, c1, fc = axis_weights(w * factor, w)
    rows = img[r0] * (1 - fr)[:, None, None] + img[r1] * fr[:, None, None]
    out = rows[:, c0] * (1 - fc)[None, :, None] + rows[:, c1] * fc[None, :, None]
    return out.astype(img.dtype)


def box_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    h, w, c = img.shape
    if h % factor or w % factor:
        raise ValueError(f"extent {img.shape[:2]} not divisible by {factor}")
    return img.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3)).astype(img.dtype)


def center_subsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Point-sample each factor x factor block at its center texel."""
    h, w = img.shape[:2]
    if h % factor or w % factor:
        raise ValueError(f"extent {img.shape[:2]} not divisible by {factor}")
    off = factor // 2
    return np.ascontiguousarray(img[off::factor, off::factor])


def upsample_node_aligned(img: np.ndarray, factor: int) -> np.ndarray:
    """Bilinear upsampling with lattice node k placed on fine pixel
    factor*k + factor//2, so center_subsample is its exact right inverse."""
    h, w = img.shape[:2]
    off = factor // 2

    def axis_weights(n_out, n_in):
        s = (np.arange(n_out) - off) / factor
        i0 = np.floor(s).astype(int)
        f = s - i0
        i1 = np.clip(i0 + 1, 0, n_in - 1)
        i0 = np.clip(i0, 0, n_in - 1)
        return i0, i1, f

    r0, r1, fr = axis_weights(h * factor, h)
    c0, c1, fc = axis_weights(w * factor, w)
    rows = img[r0] * (1 - fr)[:, None, None] + img[r1] * fr[:, None, None]
    out = rows[:, c0] * (1 - fc)[None, :, None] + rows[:, c1] * fc[None, :, None]
    return out.astype(img.dtype)


def binomial_blur5(img: np.ndarray) -> np.ndarray:
    """Separable 5x5 binomial filter [1,4,6,4,1]/16, edge-replicated."""
    k = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

    def along(x, axis):
        p = np.moveaxis(x, axis, 0)
        p = np.concatenate([p[:1], p[:1], p, p[-1:], p[-1:]], axis=0)
        out = sum(k[i] * p[i:i + x.shape[axis]] for i in range(5))
        return np.moveaxis(out, 0, axis)

    return along(along(img.astype(np.float64), 0), 1).astype(img.dtype)
