#!/usr/bin/env python3
"""Regenerate the bundled assets (deterministic).

- data/toy_target.png: 64x64 test image for the reconstruction study;
  mixes smooth shading, hard edges and fine texture so both the
  low-frequency and high-frequency behavior of the parameterizations is
  exercised. Bytes store the image values directly (no transfer curve).
- data/train.hdr, data/studio.hdr: the bundled light rigs.
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from texdistill.assets.hdr import write_hdr
from texdistill.assets.image_io import save_png
from texdistill.render.envmap import make_studio_env, make_training_env


def value_noise(rng, n, octaves=4):
    out = np.zeros((n, n))
    for o in range(octaves):
        k = 2 ** (o + 2)
        coarse = rng.uniform(-1, 1, (k, k))
        ys = np.linspace(0, k - 1, n)
        xs = np.linspace(0, k - 1, n)
        y0 = np.floor(ys).astype(int)
        x0 = np.floor(xs).astype(int)
        fy = (ys - y0)[:, None]
        fx = (xs - x0)[None, :]
        y1 = np.minimum(y0 + 1, k - 1)
        x1 = np.minimum(x0 + 1, k - 1)
        layer = (coarse[y0][:, x0] * (1 - fx) * (1 - fy)
                 + coarse[y0][:, x1] * fx * (1 - fy)
                 + coarse[y1][:, x0] * (1 - fx) * fy
                 + coarse[y1][:, x1] * fx * fy)
        out += layer / (2 ** o)
    return out


def make_toy_target(n=64):
    rng = np.random.default_rng(2024)
    yy, xx = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n), indexing="ij")

    # sky-to-ground gradient
    img = np.stack([0.55 - 0.25 * yy, 0.62 - 0.18 * yy, 0.75 - 0.05 * yy], axis=-1)

    # a matte disc with a highlight
    d = np.sqrt((xx - 0.38) ** 2 + (yy - 0.42) ** 2)
    disc = d < 0.22
    img[disc] = np.array([0.78, 0.35, 0.22])
    hl = np.exp(-(((xx - 0.31) ** 2 + (yy - 0.34) ** 2) / 0.004))
    img += hl[..., None] * np.array([0.2, 0.18, 0.15])

    # a dark slab with a hard edge
    slab = (xx > 0.62) & (yy > 0.3) & (yy < 0.85)
    img[slab] = np.array([0.18, 0.2, 0.3])

    # fine texture everywhere, stronger on the slab
    tex = value_noise(rng, n, octaves=5)
    img += tex[..., None] * 0.06
    img[slab] += (value_noise(rng, n, octaves=3)[slab, None]) * 0.08

    # per-pixel grain so the spectrum has real high-frequency content
    img += rng.normal(0, 0.015, img.shape)
    return np.clip(img, 0.02, 0.98).astype(np.float32)


def main():
    data_dir = os.path.join(os.path.dirname(__file__), "..", "src", "texdistill", "data")
    os.makedirs(data_dir, exist_ok=True)

    target = make_toy_target()
    save_png(os.path.join(data_dir, "toy_target.png"),
             np.floor(target * 255.0 + 0.5).astype(np.uint8))

    write_hdr(make_training_env(), os.path.join(data_dir, "train.hdr"))
    write_hdr(make_studio_env(), os.path.join(data_dir, "studio.hdr"))
    print(f"assets written to {data_dir}")


if __name__ == "__main__":
    main()
