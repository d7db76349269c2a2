"""Command-line entry point.

Subcommands: texgen (two-stage texture synthesis), toy2d, sranchor,
spectrum, render, gradcheck. Configuration comes from a JSON file plus
flag overrides; every run writes config.resolved.json with the effective
parameters. Exit codes: 0 ok, 2 config, 3 asset, 4 scorer/protocol,
5 numerical.
"""

import argparse
import copy
import json
import os
import sys

import numpy as np

from .errors import AssetError, ConfigError, NumericalError, ScorerError

EXIT_CODES = {ConfigError: 2, AssetError: 3, ScorerError: 4, NumericalError: 5}

DEFAULT_CONFIG = {
    "mesh": "builtin:sphere",
    "prompt": "",
    "scorer": "toy",
    "resolution": 1024,
    "seed": 0,
    "out": "runs/out",
    "channels": ["diffuse", "roughness", "metalness", "normal"],
    "freeze": [],
    "param": "explicit",
    "init_diffuse": None,
    "remote_value_range": [-1.0, 1.0],
    "envlight": "builtin:train",
    "eval_envlight": "builtin:studio",
    "background": [1.0, 1.0, 1.0],
    "stage2": True,
    "gt_textures": None,
    "scene": {
        "radius_range": [1.8, 2.6],
        "elevation_range_deg": [-10.0, 45.0],
        "fov_deg": 45.0,
        "env_rotation": True,
        "exposure": 1.0,
        "fixed_views": None,
    },
    "stage1": {
        "steps": 1500,
        "batch": 4,
        "t_range": [0.02, 0.98],
        "weight_mode": "one-minus-alpha-bar",
        "guidance": 20.0,
        "lr_start": 0.01,
        "lr_end": 0.001,
        "render_resolution": 64,
        "snapshot_every": 0,
    },
    "stage2_cfg": {
        "steps": 1000,
        "batch": 4,
        "t_range": [0.02, 0.98],
        "weight_mode": "one-minus-alpha-bar",
        "guidance": 9.0,
        "lr_start": 0.01,
        "lr_end": 0.001,
        "render_resolution": 256,
        "snapshot_every": 0,
    },
    "toy2d": {"steps": 2000, "seeds": [0]},
    "sranchor": {"steps": 500, "gain": 1.0},
    "spectrum_image": None,
}

VALID_RESOLUTIONS = (512, 1024, 2048, 4096)
CHANNEL_LETTERS = {"d": "diffuse", "r": "roughness", "m": "metalness", "n": "normal"}


def merge_config(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = merge_config(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(cfg: dict) -> dict:
    if cfg["resolution"] not in VALID_RESOLUTIONS:
        raise ConfigError(f"resolution must be one of {set(VALID_RESOLUTIONS)}, "
                          f"got {cfg['resolution']}")
    for ch in cfg["channels"]:
        if ch not in CHANNEL_LETTERS.values():
            raise ConfigError(f"unknown channel {ch!r}")
    for ch in cfg["freeze"]:
        if ch not in cfg["channels"]:
            raise ConfigError(f"frozen channel {ch!r} is not enabled")
    if cfg["param"] not in ("explicit", "dip"):
        raise ConfigError("param must be explicit or dip")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    for stage_key in ("stage1", "stage2_cfg"):
        sc = cfg[stage_key]
        if sc["weight_mode"] not in ("constant", "one-minus-alpha-bar"):
            raise ConfigError(f"{stage_key}.weight_mode invalid")
        if not (0 <= sc["t_range"][0] < sc["t_range"][1] <= 1):
            raise ConfigError(f"{stage_key}.t_range invalid")
    return cfg


def parse_channels_flag(text: str):
    names = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        name = CHANNEL_LETTERS.get(token, token)
        if name not in CHANNEL_LETTERS.values():
            raise ConfigError(f"unknown channel flag {token!r}")
        names.append(name)
    if not names:
        raise ConfigError("empty channel list")
    return names


def parse_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        cfg = merge_config(cfg, file_cfg)

    if args.mesh is not None:
        cfg["mesh"] = args.mesh
    if args.prompt is not None:
        cfg["prompt"] = args.prompt
    if args.scorer is not None:
        cfg["scorer"] = args.scorer
    if args.resolution is not None:
        cfg["resolution"] = args.resolution
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if args.channels is not None:
        cfg["channels"] = parse_channels_flag(args.channels)
    if args.freeze is not None:
        cfg["freeze"] = parse_channels_flag(args.freeze) if args.freeze else []
    if args.envlight is not None:
        cfg["envlight"] = args.envlight
    if args.stage2 is not None:
        cfg["stage2"] = args.stage2 == "on"
    if args.param is not None:
        cfg["param"] = args.param
    if os.environ.get("SDS_SERVER"):
        cfg["scorer"] = f"remote:{os.environ['SDS_SERVER']}"
    return validate_config(cfg)


def write_resolved(cfg: dict, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)


# -- subcommands --------------------------------------------------------------

def make_scorer(cfg, stage, rng, runtime=None):
    """Resolve the scorer spec for a stage (toy in-process or remote)."""
    from .score import KeyedDegenerateModel, ToySuperResModel
    spec = cfg["scorer"]
    if spec == "toy":
        if stage == 2:
            return ToySuperResModel(gain=1.0)
        if runtime is None:
            raise ConfigError("toy scorer needs render targets")
        return make_recovery_scorer(cfg, runtime, rng)
    if spec.startswith("remote:") or ":" in spec:
        from .remote import RemoteScoreModel, parse_endpoint
        host, port = parse_endpoint(spec)
        guidance = cfg["stage1" if stage == 1 else "stage2_cfg"]["guidance"]
        return RemoteScoreModel(host, port, prompt=cfg["prompt"], guidance=guidance,
                                value_range=tuple(cfg["remote_value_range"]))
    raise ConfigError(f"unknown scorer spec {spec!r}")


def make_recovery_scorer(cfg, runtime, rng, n_views=8):
    """Keyed closed-form scorer whose targets are renders of known textures."""
    from .render import fixed_view_samples
    from .score import KeyedDegenerateModel
    from .sds import render_params
    state = ground_truth_params(cfg, rng)
    views = fixed_view_samples(runtime.scene_config, n_views)
    targets = {v.view_key: render_params(state, runtime.mesh, runtime.penv, v,
                                         runtime.resolution, runtime.background)
               for v in views}
    return KeyedDegenerateModel(targets)


def ground_truth_params(cfg, rng):
    """Reference textures for toy recovery: loaded from disk or procedural."""
    from .sds import init_params
    from .assets import load_texture_set
    res = cfg["resolution"]
    if cfg["gt_textures"]:
        tex = load_texture_set(cfg["gt_textures"])
        state = init_params("explicit", res, np.random.default_rng(0))
        state.fixed_maps = {"diffuse": tex.diffuse, "roughness": tex.roughness,
                            "metalness": tex.metalness, "normal": tex.normal}
        state.frozen = set(state.raw)
        state.raw = {}
        return state
    gt_rng = np.random.default_rng(rng.integers(1 << 31) + 7919)
    state = init_params("explicit", res, gt_rng)
    # smooth the raw maps so targets are recoverable low-frequency content
    from .imageops import binomial_blur5
    for key in state.raw:
        smooth = binomial_blur5(binomial_blur5(state.raw[key])) * 4.0
        state.raw[key] = smooth.astype(np.float32)
    return state


def build_runtime(cfg, stage, mesh=None, penv=None):
    from .assets.mesh import resolve_mesh
    from .render import SceneConfig, prefilter_env, resolve_env
    from .sds import StageRuntime
    mesh = resolve_mesh(cfg["mesh"]) if mesh is None else mesh
    penv = prefilter_env(resolve_env(cfg["envlight"])) if penv is None else penv
    scfg = cfg["scene"]
    scene = SceneConfig(radius_range=tuple(scfg["radius_range"]),
                        elevation_range_deg=tuple(scfg["elevation_range_deg"]),
                        fov_deg=scfg["fov_deg"], env_rotation=scfg["env_rotation"],
                        exposure=scfg["exposure"], fixed_views=scfg["fixed_views"],
                        background=tuple(cfg["background"]))
    stage_cfg = cfg["stage1" if stage == 1 else "stage2_cfg"]
    return StageRuntime(mesh=mesh, penv=penv, scene_config=scene,
                        resolution=stage_cfg["render_resolution"],
                        background=tuple(cfg["background"]))


def stage_sds_config(cfg, stage):
    from .sds import SDSConfig
    sc = cfg["stage1" if stage == 1 else "stage2_cfg"]
    return SDSConfig(t_range=tuple(sc["t_range"]), weight_mode=sc["weight_mode"],
                     guidance=sc["guidance"], batch=sc["batch"], steps=sc["steps"],
                     lr_start=sc["lr_start"], lr_end=sc["lr_end"])


def cmd_texgen(cfg):
    from .assets import write_texture_set
    from .sds import init_params, params_to_textures, run_stage

    out_dir = cfg["out"]
    write_resolved(cfg, out_dir)
    rng = np.random.default_rng(cfg["seed"])
    enabled = {name: name in cfg["channels"]
               for name in ("diffuse", "roughness", "metalness", "normal")}

    init_diffuse = None
    if cfg["init_diffuse"]:
        from .assets import load_diffuse_png
        init_diffuse = load_diffuse_png(cfg["init_diffuse"], cfg["resolution"])

    params = init_params(cfg["param"], cfg["resolution"], rng, enabled=enabled,
                         frozen=set(cfg["freeze"]), init_diffuse=init_diffuse)

    runtime1 = build_runtime(cfg, 1)
    if cfg["scorer"] == "toy" and runtime1.scene_config.fixed_views is None:
        runtime1.scene_config.fixed_views = 8
    scorer1 = make_scorer(cfg, 1, rng, runtime1)
    cfg1 = stage_sds_config(cfg, 1)
    print(f"stage 1: {cfg1.steps} steps at {runtime1.resolution}x{runtime1.resolution}")
    params, metrics1 = run_stage(1, params, scorer1, cfg1, runtime1, rng,
                                 snapshot_dir=os.path.join(out_dir, "stage1"),
                                 snapshot_every=cfg["stage1"]["snapshot_every"])

    if cfg["stage2"]:
        theta0 = params.copy()
        runtime2 = build_runtime(cfg, 2, mesh=runtime1.mesh, penv=runtime1.penv)
        runtime2.scene_config.fixed_views = runtime1.scene_config.fixed_views
        scorer2 = make_scorer(cfg, 2, rng, runtime2)
        cfg2 = stage_sds_config(cfg, 2)
        print(f"stage 2: {cfg2.steps} steps at {runtime2.resolution}x{runtime2.resolution}")
        params, metrics2 = run_stage(2, params, scorer2, cfg2, runtime2, rng,
                                     theta0=theta0,
                                     snapshot_dir=os.path.join(out_dir, "stage2"),
                                     snapshot_every=cfg["stage2_cfg"]["snapshot_every"])

    tex = params_to_textures(params)
    write_texture_set(tex, os.path.join(out_dir, "textures"))
    print(f"textures written to {os.path.join(out_dir, 'textures')}")
    return 0


def cmd_render(cfg):
    from .assets import load_texture_set
    from .assets.image_io import save_png
    from .assets.mesh import resolve_mesh
    from .render import (fixed_view_samples, prefilter_env, rasterize, resolve_env,
                         SceneConfig, shade, tonemap)

    out_dir = cfg["out"]
    write_resolved(cfg, out_dir)
    if not cfg["gt_textures"]:
        raise ConfigError("render needs gt_textures pointing at a texture directory")
    tex = load_texture_set(cfg["gt_textures"])
    mesh = resolve_mesh(cfg["mesh"])
    env = resolve_env(cfg["eval_envlight"])
    penv = prefilter_env(env)
    scfg = cfg["scene"]
    scene = SceneConfig(radius_range=(1.4, 1.4),
                        elevation_range_deg=tuple(scfg["elevation_range_deg"]),
                        fov_deg=scfg["fov_deg"], exposure=scfg["exposure"],
                        background=tuple(cfg["background"]))
    views = fixed_view_samples(scene, 20)
    os.makedirs(out_dir, exist_ok=True)
    for view in views:
        gbuf = rasterize(mesh, view, (512, 512))
        img = shade(gbuf, tex, penv, view, background=tuple(cfg["background"]))
        save_png(os.path.join(out_dir, f"view_{view.view_key:02d}.png"),
                 tonemap(img, view.exposure))
    print(f"wrote {len(views)} renders to {out_dir}")
    return 0


def cmd_toy2d(cfg):
    from .analysis import toy2d_experiment
    out_dir = cfg["out"]
    write_resolved(cfg, out_dir)
    rows = toy2d_experiment(steps=cfg["toy2d"]["steps"],
                            seeds=tuple(cfg["toy2d"]["seeds"]), out_dir=out_dir)
    for r in rows:
        print(f"{r.model}/{r.param} seed {r.seed}: PSNR {r.psnr_db:.2f} dB, "
              f"latent residual {r.latent_residual_rel:.2e}")
    return 0


def cmd_sranchor(cfg):
    from .analysis import make_sr_anchor_init, sr_anchor_experiment
    out_dir = cfg["out"]
    write_resolved(cfg, out_dir)
    curves = sr_anchor_experiment(make_sr_anchor_init(),
                                  steps=cfg["sranchor"]["steps"],
                                  gain=cfg["sranchor"]["gain"], out_dir=out_dir)
    for name, pts in curves.items():
        print(f"{name}: final PSNR to anchor {pts[-1][1]:.2f} dB, "
              f"HF energy {pts[0][2]:.2e} -> {pts[-1][2]:.2e}")
    return 0


def cmd_spectrum(cfg):
    from .analysis import power_spectrum, write_spectrum_csv
    from .assets.image_io import load_png
    out_dir = cfg["out"]
    write_resolved(cfg, out_dir)
    if not cfg["spectrum_image"]:
        raise ConfigError("spectrum needs spectrum_image pointing at a PNG")
    img = load_png(cfg["spectrum_image"]).astype(np.float64) / 255.0
    report = power_spectrum(img)
    write_spectrum_csv(report, os.path.join(out_dir, "spectrum.csv"))
    print(f"total power {report.total_power:.6e}, "
          f"high-band energy {report.band_energy_hf:.6e}")
    return 0


def cmd_gradcheck(cfg):
    from .assets.mesh import resolve_mesh
    from .gradcheck import gradcheck_passed, run_gradcheck
    from .render import resolve_env
    write_resolved(cfg, cfg["out"])
    rows = run_gradcheck(resolve_mesh(cfg["mesh"]), resolve_env(cfg["envlight"]))
    for r in rows:
        status = "ok" if r.rel_err < 1e-3 else "FAIL"
        print(f"{r.channel:10s} seed {r.seed}: rel err {r.rel_err:.2e} [{status}]")
    if not gradcheck_passed(rows):
        raise NumericalError("finite-difference check failed")
    return 0


COMMANDS = {
    "texgen": cmd_texgen,
    "render": cmd_render,
    "toy2d": cmd_toy2d,
    "sranchor": cmd_sranchor,
    "spectrum": cmd_spectrum,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="texdistill",
                                     description="PBR texture synthesis via score distillation")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--mesh", help="OBJ path or builtin:sphere / builtin:box")
    parser.add_argument("--prompt")
    parser.add_argument("--scorer", help="toy | remote:HOST:PORT")
    parser.add_argument("--resolution", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--channels", help="comma list, e.g. d,r,m,n")
    parser.add_argument("--freeze", help="comma list of channels to freeze")
    parser.add_argument("--envlight", help="builtin:train / builtin:studio / HDR path")
    parser.add_argument("--stage2", choices=["on", "off"])
    parser.add_argument("--param", choices=["explicit", "dip"])
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, AssetError, ScorerError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES[type(exc)]


if __name__ == "__main__":
    sys.exit(main())
