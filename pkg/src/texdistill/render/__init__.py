"""Differentiable image formation: rasterization and split-sum PBR shading."""

from .camera import SceneSample, SceneConfig, sample_scene, fixed_view_samples
from .raster import GBuffer, rasterize
from .envmap import (PrefilteredEnv, prefilter_env, env_brdf_lut,
                     make_training_env, make_studio_env, resolve_env)
from .shade import shade, build_shading, build_render_graph, tonemap

__all__ = [
    "SceneSample", "SceneConfig", "sample_scene", "fixed_view_samples",
    "GBuffer", "rasterize",
    "PrefilteredEnv", "prefilter_env", "env_brdf_lut",
    "make_training_env", "make_studio_env", "resolve_env",
    "shade", "build_shading", "build_render_graph", "tonemap",
]
