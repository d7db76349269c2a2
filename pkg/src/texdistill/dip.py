"""Untrained convolutional image prior over a fixed noise input.

A 5-level encoder-decoder with skip connections; the network weights are
the optimization variable and the input noise stays fixed for the whole
run. Box downsampling and bilinear upsampling keep every building block
inside the tape's op set.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class DIPSpec:
    in_channels: int = 8
    channels: tuple = (16, 32, 64, 64, 64)
    out_channels: int = 3
    kernel: int = 3

    def min_resolution(self):
        return 2 ** len(self.channels)


def init_dip_weights(rng: np.random.Generator, spec: DIPSpec) -> dict:
    """He-scaled conv weights, zero biases. Zero weights give a constant output."""
    ch = spec.channels
    k = spec.kernel
    shapes = {}
    prev = spec.in_channels
    for i, c in enumerate(ch):
        shapes[f"enc{i}_w"] = (k, k, prev, c)
        shapes[f"enc{i}_b"] = (c,)
        prev = c
    for i in range(len(ch) - 2, -1, -1):
        cin = (ch[i + 1] if i == len(ch) - 2 else ch[i + 1]) + ch[i]
        shapes[f"dec{i}_w"] = (k, k, cin, ch[i])
        shapes[f"dec{i}_b"] = (ch[i],)
    shapes["head_w"] = (k, k, ch[0], spec.out_channels)
    shapes["head_b"] = (spec.out_channels,)

    weights = {}
    for name, shape in shapes.items():
        if name.endswith("_b"):
            weights[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = shape[0] * shape[1] * shape[2]
            weights[name] = (rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)).astype(np.float32)
    return weights


def make_noise(rng: np.random.Generator, resolution: int, spec: DIPSpec) -> np.ndarray:
    return rng.normal(0.0, 1.0, (resolution, resolution, spec.in_channels)).astype(np.float32)


def build_dip(g, spec: DIPSpec, weight_nodes: dict, noise_node: int) -> int:
    """Append the network to graph `g`; returns the raw HxWxC_out node."""
    pad = spec.kernel // 2
    skips = []
    x = noise_node
    for i in range(len(spec.channels)):
        if i > 0:
            x = g.downsample_box(x)
        x = g.tanh(g.conv2d(x, weight_nodes[f"enc{i}_w"], weight_nodes[f"enc{i}_b"], pad=pad))
        skips.append(x)
    for i in range(len(spec.channels) - 2, -1, -1):
        x = g.concat([g.upsample2x(x), skips[i]], axis=-1)
        x = g.tanh(g.conv2d(x, weight_nodes[f"dec{i}_w"], weight_nodes[f"dec{i}_b"], pad=pad))
    return g.conv2d(x, weight_nodes["head_w"], weight_nodes["head_b"], pad=pad)
