"""Finite-difference verification of the rendering VJP.

For each texture channel the analytic backward pass is compared against
central differences of the forward pass along random probe directions.
Per-direction derivatives are aggregated in an L2 ratio so that a single
direction with heavy cancellation cannot dominate the relative error.
"""

from dataclasses import dataclass

import numpy as np

from . import gradtape as gt
from .render import build_render_graph, prefilter_env, rasterize
from .render.camera import SceneConfig, fixed_view_samples
from .textures import TextureSet

CHANNELS = ("diffuse", "roughness", "metalness", "normal")


@dataclass
class GradCheckRow:
    channel: str
    seed: int
    rel_err: float
    fd_norm: float


def random_texture_set(rng, res: int) -> TextureSet:
    """Random maps away from activation bounds and clamp kinks."""
    nr = np.tanh(rng.uniform(-0.5, 0.5, (res, res, 2))).astype(np.float32)
    n = np.concatenate([nr, np.ones((res, res, 1), np.float32)], axis=2)
    n /= np.linalg.norm(n, axis=2, keepdims=True)
    return TextureSet(
        diffuse=rng.uniform(0.1, 0.9, (res, res, 3)).astype(np.float32),
        roughness=rng.uniform(0.15, 0.85, (res, res, 1)).astype(np.float32),
        metalness=rng.uniform(0.1, 0.9, (res, res, 1)).astype(np.float32),
        normal=n.astype(np.float32),
    )


def run_gradcheck(mesh, env, texture_res=16, render_res=64, seeds=(0, 1, 2, 3, 4),
                  directions=4, eps=1e-3) -> list:
    """Returns one GradCheckRow per (channel, seed)."""
    penv = prefilter_env(env)
    scene = SceneConfig()
    view = fixed_view_samples(scene, 4)[1]
    gbuf = rasterize(mesh, view, (render_res, render_res))
    g, names = build_render_graph(gbuf, penv, view)

    rows = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        tex = random_texture_set(rng, texture_res)
        inputs = {n: tex.map(n) for n in names}
        out = gt.forward(g, inputs)["image"]
        go = rng.uniform(0.1, 1.0, out.shape).astype(np.float32)
        grads = gt.backward(g, go)

        for name in CHANNELS:
            base = tex.map(name)
            num = 0.0
            den = 0.0
            for _ in range(directions):
                d = rng.choice([-1.0, 1.0], size=base.shape).astype(np.float32)
                hi = gt.forward(g, {**inputs, name: (base + eps * d).astype(np.float32)})["image"]
                lo = gt.forward(g, {**inputs, name: (base - eps * d).astype(np.float32)})["image"]
                want = float(np.sum(go.astype(np.float64) * (hi.astype(np.float64) - lo.astype(np.float64))) / (2 * eps))
                got = float(np.sum(grads[name].astype(np.float64) * d))
                num += (got - want) ** 2
                den += want ** 2
            rows.append(GradCheckRow(name, seed, float(np.sqrt(num / max(den, 1e-18))),
                                     float(np.sqrt(den))))
        gt.forward(g, inputs)  # restore cached activations for reuse
    return rows


def gradcheck_passed(rows, tol=1e-3) -> bool:
    return all(r.rel_err < tol for r in rows)
