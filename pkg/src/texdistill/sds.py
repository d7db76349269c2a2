"""Score-distillation gradients, texture parameterizations and the
two-stage optimization loop.

The gradient estimator follows the clean-image form: draw (t, eps), form
the noised render, ask the score model for its noise estimate, and pull
the render toward the one-step denoised image,

    grad = w(t) * (x0 - x0_hat),

never differentiating x0_hat's dependence on the parameters. With the
closed-form single-image model this collapses to the deterministic MSE
gradient for every draw, which the test suite leans on heavily.
"""

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import gradtape as gt
from .dip import DIPSpec, build_dip, init_dip_weights, make_noise
from .errors import ConfigError, NumericalError
from .imageops import center_subsample
from .render import build_shading, rasterize, sample_scene
from .score import noise_image, predict_x0
from .textures import (DEFAULT_METALNESS, DEFAULT_ROUGHNESS, TextureSet,
                       flat_normal)

CHANNEL_WIDTHS = {"diffuse": 3, "roughness": 1, "metalness": 1, "normal": 2}
CHANNEL_ORDER = ("diffuse", "roughness", "metalness", "normal")
WEIGHT_MODES = ("constant", "one-minus-alpha-bar")


@dataclass
class SDSConfig:
    t_range: tuple = (0.02, 0.98)
    weight_mode: str = "one-minus-alpha-bar"
    guidance: float = 1.0
    batch: int = 4
    steps: int = 1500
    lr_start: float = 0.01
    lr_end: float = 0.001

    def validate(self):
        if not (0.0 <= self.t_range[0] < self.t_range[1] <= 1.0):
            raise ConfigError(f"invalid t range {self.t_range}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"weight mode must be one of {WEIGHT_MODES}")
        if self.steps < 0 or self.batch < 1:
            raise ConfigError("steps must be >= 0 and batch >= 1")
        return self

    def lr_at(self, step: int) -> float:
        if self.steps <= 1:
            return self.lr_start
        u = step / (self.steps - 1)
        return self.lr_end + 0.5 * (self.lr_start - self.lr_end) * (1 + math.cos(math.pi * u))


def weight_value(mode: str, alpha_bar: float) -> float:
    if mode == "constant":
        return 1.0
    return 1.0 - alpha_bar


@dataclass
class ParamState:
    """Optimizable texture state: raw arrays plus Adam moments.

    Explicit mode holds pre-activation maps per trainable channel; DIP
    mode holds network weights and the fixed noise input. Channels that
    are disabled or frozen come from `fixed_maps` (falling back to the
    stock constants).
    """

    mode: str
    resolution: int
    raw: dict
    enabled: dict
    frozen: set = field(default_factory=set)
    fixed_maps: dict = field(default_factory=dict)
    noise: np.ndarray = None
    dip_spec: DIPSpec = None
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step_count: int = 0

    def trainable_keys(self):
        return sorted(self.raw.keys())

    def copy(self) -> "ParamState":
        return ParamState(
            mode=self.mode, resolution=self.resolution,
            raw={k: v.copy() for k, v in self.raw.items()},
            enabled=dict(self.enabled), frozen=set(self.frozen),
            fixed_maps={k: v.copy() for k, v in self.fixed_maps.items()},
            noise=None if self.noise is None else self.noise.copy(),
            dip_spec=self.dip_spec,
            m={k: v.copy() for k, v in self.m.items()},
            v={k: v.copy() for k, v in self.v.items()},
            step_count=self.step_count)


def init_params(mode: str, resolution: int, rng: np.random.Generator,
                enabled=None, frozen=(), init_diffuse=None) -> ParamState:
    """Fresh parameters: raw maps ~ N(0, 0.1^2) or He-initialized DIP weights."""
    if mode not in ("explicit", "dip"):
        raise ConfigError(f"parameterization must be explicit or dip, got {mode!r}")
    enabled = dict.fromkeys(CHANNEL_ORDER, True) if enabled is None else dict(enabled)
    frozen = set(frozen)
    for name in frozen:
        if name not in CHANNEL_ORDER:
            raise ConfigError(f"unknown channel {name!r} in freeze list")

    fixed = {}
    if init_diffuse is not None:
        init_diffuse = np.asarray(init_diffuse, np.float32)
        if init_diffuse.shape != (resolution, resolution, 3):
            raise ConfigError(f"diffuse init has shape {init_diffuse.shape}, "
                              f"expected {(resolution, resolution, 3)}")
    if "diffuse" in frozen and init_diffuse is not None:
        fixed["diffuse"] = init_diffuse

    state = ParamState(mode=mode, resolution=resolution, raw={}, enabled=enabled,
                       frozen=frozen, fixed_maps=fixed)
    trainable = [c for c in CHANNEL_ORDER if enabled[c] and c not in frozen]

    if mode == "explicit":
        for name in trainable:
            shape = (resolution, resolution, CHANNEL_WIDTHS[name])
            raw = rng.normal(0.0, 0.1, shape).astype(np.float32)
            if name == "diffuse" and init_diffuse is not None:
                raw = _logit(init_diffuse)
            state.raw[name] = raw
    else:
        spec = DIPSpec(out_channels=sum(CHANNEL_WIDTHS[c] for c in trainable))
        if resolution < spec.min_resolution():
            raise ConfigError(f"DIP needs resolution >= {spec.min_resolution()}")
        state.dip_spec = spec
        state.raw = init_dip_weights(rng, spec)
        state.noise = make_noise(rng, resolution, spec)
        if init_diffuse is not None and "diffuse" in trainable:
            raise ConfigError("diffuse map import requires explicit mode or a frozen diffuse")

    state.m = {k: np.zeros_like(v) for k, v in state.raw.items()}
    state.v = {k: np.zeros_like(v) for k, v in state.raw.items()}
    return state


def _logit(x):
    x = np.clip(x, 1e-5, 1.0 - 1e-5)
    return np.log(x / (1.0 - x)).astype(np.float32)


def _fixed_map(state: ParamState, name: str) -> np.ndarray:
    if name in state.fixed_maps:
        return state.fixed_maps[name]
    res = state.resolution
    if name == "diffuse":
        return np.full((res, res, 3), 0.5, np.float32)
    if name == "roughness":
        return np.full((res, res, 1), DEFAULT_ROUGHNESS, np.float32)
    if name == "metalness":
        return np.full((res, res, 1), DEFAULT_METALNESS, np.float32)
    return flat_normal(res)


def build_texture_nodes(g: gt.Graph, state: ParamState):
    """Append the parameter-to-texture mapping; returns (nodes, feeds).

    `nodes` maps channel name to a graph node holding the decoded map;
    `feeds` maps graph input names to the arrays to bind at forward time.
    """
    feeds = {}
    nodes = {}
    trainable = [c for c in CHANNEL_ORDER if state.enabled[c] and c not in state.frozen]

    if state.mode == "explicit":
        raw_nodes = {}
        for name in trainable:
            nid = g.input(f"raw_{name}", requires_grad=True)
            feeds[f"raw_{name}"] = state.raw[name]
            raw_nodes[name] = nid
    else:
        weight_nodes = {}
        for key in state.trainable_keys():
            weight_nodes[key] = g.input(f"dip_{key}", requires_grad=True)
            feeds[f"dip_{key}"] = state.raw[key]
        out = build_dip(g, state.dip_spec, weight_nodes, g.const(state.noise))
        raw_nodes = {}
        offset = 0
        for name in trainable:
            width = CHANNEL_WIDTHS[name]
            raw_nodes[name] = g.slice_c(out, offset, offset + width)
            offset += width

    for name in CHANNEL_ORDER:
        if name not in raw_nodes:
            nodes[name] = g.const(_fixed_map(state, name))
        elif name == "normal":
            res = state.resolution
            ones = g.const(np.ones((res, res, 1), np.float32))
            nodes[name] = g.normalize3(g.concat([g.tanh(raw_nodes[name]), ones], axis=-1))
        else:
            nodes[name] = g.sigmoid(raw_nodes[name])
    return nodes, feeds


def params_to_textures(state: ParamState) -> TextureSet:
    g = gt.Graph()
    nodes, feeds = build_texture_nodes(g, state)
    for name, nid in nodes.items():
        g.output(name, nid)
    out = gt.forward(g, feeds)
    return TextureSet(diffuse=out["diffuse"], roughness=out["roughness"],
                      metalness=out["metalness"], normal=out["normal"])


# -- gradient estimators -----------------------------------------------------

def _to_model_space(scorer, x0):
    """Map a tone-mapped [0,1] render into the scorer's value range."""
    lo, hi = getattr(scorer, "value_range", (0.0, 1.0))
    scale = hi - lo
    return lo + scale * x0, scale


def sds_grad(scorer, schedule, x0, w_mode="constant", s=1.0, rng=None,
             key=None, t_range=(0.02, 0.98)):
    """Single-draw SDS gradient with respect to the rendered image."""
    rng = rng or np.random.default_rng()
    x0 = np.asarray(x0, np.float64)
    x0m, scale = _to_model_space(scorer, x0)
    t = float(rng.uniform(*t_range))
    eps = rng.standard_normal(x0.shape)
    a = schedule.alpha_bar(t)
    x_t = noise_image(x0m, a, eps)
    eps_hat = scorer.eps(x_t, t, key=key, guidance=s, seed=int(rng.integers(1 << 62)))
    x0_hat = predict_x0(x_t, t, eps_hat, schedule)
    w = weight_value(w_mode, a)
    return (scale * w * (x0m - x0_hat)).astype(np.float32)


def sr_sds_grad(sr_scorer, schedule, x0, x_cond, strategy="fixed-cond",
                w_mode="constant", s=1.0, rng=None, t_range=(0.02, 0.98)):
    """Super-resolution SDS gradient.

    fixed-cond conditions on the supplied anchor image; self-cond
    conditions on a downsample of the current render, treated as a
    constant (not differentiated). Self-conditioning point-samples block
    centers: box averaging would filter out exactly the sharpening
    overshoot whose feedback loop the refinement drift consists of.
    """
    rng = rng or np.random.default_rng()
    x0 = np.asarray(x0, np.float64)
    factor = getattr(sr_scorer, "factor", 4)
    if strategy == "fixed-cond":
        cond = np.asarray(x_cond, np.float64)
    elif strategy == "self-cond":
        cond = center_subsample(x0, factor)
    else:
        raise ConfigError(f"unknown conditioning strategy {strategy!r}")
    if x0.shape[0] != factor * cond.shape[0] or x0.shape[1] != factor * cond.shape[1]:
        raise ConfigError(f"render {x0.shape[:2]} must be {factor}x the condition "
                          f"{cond.shape[:2]}")
    x0m, scale = _to_model_space(sr_scorer, x0)
    condm, _ = _to_model_space(sr_scorer, cond)
    t = float(rng.uniform(*t_range))
    eps = rng.standard_normal(x0.shape)
    a = schedule.alpha_bar(t)
    x_t = noise_image(x0m, a, eps)
    eps_hat = sr_scorer.eps(x_t, t, cond=condm, guidance=s, seed=int(rng.integers(1 << 62)))
    x0_hat = predict_x0(x_t, t, eps_hat, schedule)
    w = weight_value(w_mode, a)
    return (scale * w * (x0m - x0_hat)).astype(np.float32)


def adam_update(param, m, v, t, grad, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, all arrays modified in place."""
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)


def adam_step(state: ParamState, grads: dict, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update in place; frozen channels receive none."""
    state.step_count += 1
    for key in state.trainable_keys():
        if key not in grads:
            continue
        adam_update(state.raw[key], state.m[key], state.v[key], state.step_count,
                    grads[key], lr, beta1, beta2, eps)
    return state


# -- two-stage pipeline -------------------------------------------------------

@dataclass
class StageRuntime:
    """Everything run_stage needs besides the optimizer state."""
    mesh: object
    penv: object
    scene_config: object
    resolution: int           # render resolution of this stage
    background: tuple = (1.0, 1.0, 1.0)
    cond_factor: int = 4      # stage-2 condition is rendered at resolution/cond_factor


def _build_texture_graph(state):
    """Graph from raw parameters to the four decoded maps."""
    g = gt.Graph()
    nodes, feeds = build_texture_nodes(g, state)
    for name, nid in nodes.items():
        g.output(name, nid)
    return g, feeds


def _build_shade_graph(gbuffer, penv, sample, background):
    """Graph from decoded texture maps to the tone-mapped render."""
    g = gt.Graph()
    tex_nodes = {name: g.input(name, requires_grad=True) for name in CHANNEL_ORDER}
    image = build_shading(g, tex_nodes, gbuffer, penv, sample, background)
    x0 = g.clamp(g.scale(image, float(sample.exposure)), 0.0, 1.0)
    g.output("x0", x0)
    return g


def render_params(state, mesh, penv, sample, resolution, background=(1.0, 1.0, 1.0)):
    """Tone-mapped render of the current parameters (numpy, no gradients)."""
    gbuffer = rasterize(mesh, sample, (resolution, resolution))
    tex_g, feeds = _build_texture_graph(state)
    textures = gt.forward(tex_g, feeds)
    shade_g = _build_shade_graph(gbuffer, penv, sample, background)
    return gt.forward(shade_g, textures)["x0"]


def run_stage(stage: int, params: ParamState, scorer, sds_config: SDSConfig,
              runtime: StageRuntime, rng: np.random.Generator,
              theta0: ParamState = None, snapshot_dir=None, snapshot_every=0):
    """Optimize `params` with SDS for one stage; returns (params, metrics).

    Stage 2 renders the frozen stage-1 parameters through the same
    rasterization as the current render for every scene sample, subsamples
    that image to condition size, and conditions the super-resolution
    scorer on it.
    """
    sds_config.validate()
    if stage not in (1, 2):
        raise ConfigError(f"stage must be 1 or 2, got {stage}")
    if stage == 2 and theta0 is None:
        raise ConfigError("stage 2 needs the frozen stage-1 parameters")

    schedule = scorer.schedule
    raster_cache = {}
    metrics = []
    tex_graph, _ = _build_texture_graph(params)
    theta0_textures = None
    if theta0 is not None:
        g0, feeds0 = _build_texture_graph(theta0)
        theta0_textures = gt.forward(g0, feeds0)

    def gbuffer_for(sample, res):
        key = (sample.cache_key(), res)
        if runtime.scene_config.fixed_views:
            if key not in raster_cache:
                raster_cache[key] = rasterize(runtime.mesh, sample, (res, res))
            return raster_cache[key]
        return rasterize(runtime.mesh, sample, (res, res))

    for step in range(sds_config.steps):
        t_start = time.perf_counter()
        lr = sds_config.lr_at(step)
        feeds = {("raw_" if params.mode == "explicit" else "dip_") + k: v
                 for k, v in params.raw.items()}
        try:
            textures = gt.forward(tex_graph, feeds)
        except gt.GraphError as exc:
            raise NumericalError(f"step {step}: texture decode failed: {exc}") from exc
        tex_grads = {name: np.zeros_like(arr) for name, arr in textures.items()}

        for _ in range(sds_config.batch):
            sample = sample_scene(rng, runtime.scene_config)
            gbuffer = gbuffer_for(sample, runtime.resolution)
            shade_g = _build_shade_graph(gbuffer, runtime.penv, sample,
                                         runtime.background)
            try:
                x0 = gt.forward(shade_g, textures)["x0"]
            except gt.GraphError as exc:
                raise NumericalError(f"step {step}: forward failed: {exc}") from exc

            if stage == 1:
                grad_img = sds_grad(scorer, schedule, x0, sds_config.weight_mode,
                                    sds_config.guidance, rng, key=sample.view_key,
                                    t_range=sds_config.t_range)
            else:
                # anchor: the frozen stage-1 textures rendered through the
                # same rasterization, then subsampled to condition size, so
                # anchor and render differ only in texture content
                cond_g = _build_shade_graph(gbuffer, runtime.penv, sample,
                                            runtime.background)
                x0_frozen = gt.forward(cond_g, theta0_textures)["x0"]
                x_cond = center_subsample(x0_frozen, runtime.cond_factor)
                grad_img = sr_sds_grad(scorer, schedule, x0, x_cond,
                                       strategy="fixed-cond",
                                       w_mode=sds_config.weight_mode,
                                       s=sds_config.guidance, rng=rng,
                                       t_range=sds_config.t_range)

            for name, arr in gt.backward(shade_g, grad_img).items():
                tex_grads[name] += arr / sds_config.batch

        raw_grads = gt.backward(tex_graph, tex_grads)
        grad_accum = {name.split("_", 1)[1]: arr for name, arr in raw_grads.items()}
        adam_step(params, grad_accum, lr)
        grad_norm = math.sqrt(sum(float(np.sum(v.astype(np.float64) ** 2))
                                  for v in grad_accum.values()))
        metrics.append((step, grad_norm, time.perf_counter() - t_start))

        if snapshot_dir and snapshot_every and (step + 1) % snapshot_every == 0:
            _write_snapshot(params, snapshot_dir, step + 1)

    if snapshot_dir:
        os.makedirs(snapshot_dir, exist_ok=True)
        write_metrics_csv(os.path.join(snapshot_dir, "metrics.csv"), metrics)
    return params, metrics


def _write_snapshot(state, snapshot_dir, step):
    from .assets.image_io import save_png, srgb_encode, to_u8
    out = os.path.join(snapshot_dir, f"step_{step}")
    os.makedirs(out, exist_ok=True)
    tex = params_to_textures(state)
    save_png(os.path.join(out, "diffuse.png"), to_u8(srgb_encode(tex.diffuse)))
    save_png(os.path.join(out, "roughness.png"), to_u8(tex.roughness))
    save_png(os.path.join(out, "metalness.png"), to_u8(tex.metalness))
    save_png(os.path.join(out, "normal.png"), to_u8((tex.normal + 1) * 0.5))


def write_metrics_csv(path, metrics):
    with open(path, "w") as fh:
        fh.write("step,grad_norm,seconds\n")
        for step, gnorm, seconds in metrics:
            fh.write(f"{step},{gnorm:.9e},{seconds:.6f}\n")
