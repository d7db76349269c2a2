"""Texture set export/import.

Each map goes out twice: an 8-bit PNG for preview/engine use and a
32-bit float EXR preserving exact values. Diffuse PNG is sRGB encoded;
roughness/metalness/normal PNGs hold linear data (non-color convention).
"""

import os

import numpy as np

from ..errors import AssetError
from ..textures import TextureSet, flat_normal, DEFAULT_ROUGHNESS, DEFAULT_METALNESS
from .exr import read_exr, write_exr
from .image_io import load_png, save_png, srgb_decode, srgb_encode, to_u8


def write_texture_set(textures: TextureSet, out_dir):
    textures.validate(strict_resolution=False)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise AssetError(f"cannot create {out_dir}: {exc}") from exc

    save_png(os.path.join(out_dir, "diffuse.png"), to_u8(srgb_encode(textures.diffuse)))
    save_png(os.path.join(out_dir, "roughness.png"), to_u8(textures.roughness))
    save_png(os.path.join(out_dir, "metalness.png"), to_u8(textures.metalness))
    save_png(os.path.join(out_dir, "normal.png"), to_u8((textures.normal + 1.0) * 0.5))

    write_exr(os.path.join(out_dir, "diffuse.exr"), textures.diffuse)
    write_exr(os.path.join(out_dir, "roughness.exr"), textures.roughness)
    write_exr(os.path.join(out_dir, "metalness.exr"), textures.metalness)
    write_exr(os.path.join(out_dir, "normal.exr"), textures.normal)


def load_texture_set(tex_dir) -> TextureSet:
    """Load a texture set written by write_texture_set (EXR preferred)."""
    def read_map(name, channels):
        exr_path = os.path.join(tex_dir, f"{name}.exr")
        png_path = os.path.join(tex_dir, f"{name}.png")
        if os.path.exists(exr_path):
            img, _ = read_exr(exr_path)
        elif os.path.exists(png_path):
            raw = load_png(png_path).astype(np.float32) / 255.0
            if name == "diffuse":
                img = srgb_decode(raw)
            elif name == "normal":
                img = raw * 2.0 - 1.0
            else:
                img = raw
        else:
            raise AssetError(f"missing texture map {name} in {tex_dir}")
        if img.shape[2] > channels:
            img = img[:, :, :channels]
        elif img.shape[2] < channels:
            img = np.repeat(img, channels, axis=2)
        return np.ascontiguousarray(img, dtype=np.float32)

    normal = read_map("normal", 3)
    norms = np.maximum(np.linalg.norm(normal, axis=2, keepdims=True), 1e-6)
    return TextureSet(
        diffuse=np.clip(read_map("diffuse", 3), 0.0, 1.0),
        roughness=np.clip(read_map("roughness", 1), 0.0, 1.0),
        metalness=np.clip(read_map("metalness", 1), 0.0, 1.0),
        normal=(normal / norms).astype(np.float32),
    )


def load_diffuse_png(path, resolution: int) -> np.ndarray:
    """Import an external diffuse PNG as a linear map at the run resolution."""
    raw = load_png(path).astype(np.float32) / 255.0
    if raw.shape[2] == 1:
        raw = np.repeat(raw, 3, axis=2)
    linear = srgb_decode(raw[:, :, :3])
    if linear.shape[0] != resolution or linear.shape[1] != resolution:
        linear = _resize_bilinear(linear, resolution, resolution)
    return linear


def _resize_bilinear(img, h, w):
    ih, iw = img.shape[:2]
    ys = (np.arange(h) + 0.5) * ih / h - 0.5
    xs = (np.arange(w) + 0.5) * iw / w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, ih - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, iw - 1)
    y1 = np.minimum(y0 + 1, ih - 1)
    x1 = np.minimum(x0 + 1, iw - 1)
    fy = np.clip(ys - y0, 0, 1)[:, None, None]
    fx = np.clip(xs - x0, 0, 1)[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def default_texture_constants():
    return {"roughness": DEFAULT_ROUGHNESS, "metalness": DEFAULT_METALNESS,
            "normal": flat_normal}
