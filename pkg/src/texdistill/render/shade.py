"""Deferred PBR shading as a differentiable graph.

Per covered pixel: sample the four maps bilinearly at the G-buffer uv,
decode the tangent-space normal through the TBN frame, then

    diffuse  = (1 - metal) * albedo * irradiance(n)
    specular = (F0 * A + B) * prefiltered(reflect(v, n), roughness)
    F0       = mix(0.04, albedo, metal)

with (A, B) from the BRDF lookup table at (NoV, roughness). Background
pixels take a configured constant. Gradients flow to the texture maps
only; geometry and lighting are graph constants.
"""

import math

import numpy as np

from .. import gradtape as gt
from ..errors import NumericalError
from ..textures import TextureSet
from .camera import SceneSample
from .envmap import PrefilteredEnv
from .raster import GBuffer

DIELECTRIC_F0 = 0.04


def build_shading(g: gt.Graph, tex_nodes: dict, gbuffer: GBuffer,
                  penv: PrefilteredEnv, sample: SceneSample,
                  background=(1.0, 1.0, 1.0)) -> int:
    """Append shading nodes to `g`; returns the HxWx3 linear image node.

    `tex_nodes` maps 'diffuse'/'roughness'/'metalness'/'normal' to graph
    nodes holding full-resolution maps.
    """
    w, h = gbuffer.resolution
    idx = gbuffer.covered_indices()
    uv = g.const(gbuffer.gather(gbuffer.uv))
    tangent = g.const(gbuffer.gather(gbuffer.tangent))
    bitangent = g.const(gbuffer.gather(gbuffer.bitangent))
    geo_normal = g.const(gbuffer.gather(gbuffer.normal))
    view = g.const(gbuffer.gather(gbuffer.view_dir))

    albedo = g.bilinear_sample(tex_nodes["diffuse"], uv, wrap="repeat")
    rough = g.clamp(g.bilinear_sample(tex_nodes["roughness"], uv, wrap="repeat"), 0.0, 1.0)
    metal = g.clamp(g.bilinear_sample(tex_nodes["metalness"], uv, wrap="repeat"), 0.0, 1.0)
    n_tan = g.normalize3(g.bilinear_sample(tex_nodes["normal"], uv, wrap="repeat"))

    n = g.normalize3(g.add(
        g.add(g.mul(tangent, g.slice_c(n_tan, 0, 1)),
              g.mul(bitangent, g.slice_c(n_tan, 1, 2))),
        g.mul(geo_normal, g.slice_c(n_tan, 2, 3))))

    # smooth positive NoV: 0.5*(x + sqrt(x^2 + d^2)) stays > 0 for grazing
    # and back-tilted shading normals without a clamp kink at the threshold
    nov_raw = g.dot3(n, view)
    nov2 = g.add(g.mul(nov_raw, nov_raw), g.const(np.full((1, 1), 4e-4, np.float32)))
    nov = g.scale(g.add(nov_raw, g.pow(nov2, 0.5)), 0.5)
    refl = g.sub(g.mul(n, g.scale(nov_raw, 2.0)), view)

    irradiance = _sh_irradiance(g, penv.sh_coeffs, n, sample.env_rotation)
    lod = g.scale(rough, float(penv.mips - 1))
    prefiltered = g.envmap_sample(penv.levels, refl, lod, rotation=sample.env_rotation)

    lut_uv = g.concat([g.pow(nov, 0.5), rough], axis=-1)
    lut_ab = g.bicubic_sample(g.const(penv.lut), lut_uv)
    lut_a = g.slice_c(lut_ab, 0, 1)
    lut_b = g.slice_c(lut_ab, 1, 2)

    one_minus_metal = g.sub(g.const(np.ones((1, 1), np.float32)), metal)
    diffuse_term = g.mul(g.mul(albedo, one_minus_metal), irradiance)
    f0 = g.mix(g.const(np.full((1, 1), DIELECTRIC_F0, np.float32)), albedo, metal)
    spec_term = g.mul(g.add(g.mul(f0, lut_a), lut_b), prefiltered)
    color = g.add(diffuse_term, spec_term)

    bg = np.broadcast_to(np.asarray(background, np.float32), (h, w, 3)).copy()
    return g.compose_image(bg, idx, color)


def _sh_irradiance(g: gt.Graph, poly: np.ndarray, n_node: int, rotation: float) -> int:
    """Diffuse irradiance as the order-2 SH quadratic in the (rotated) normal.

    The environment rotation about +y becomes a rotation of the lookup
    direction, matching the equirectangular u-shift of envmap_sample.
    """
    cr, sr = math.cos(rotation), math.sin(rotation)
    x = g.slice_c(n_node, 0, 1)
    y = g.slice_c(n_node, 1, 2)
    z = g.slice_c(n_node, 2, 3)
    xr = g.add(g.scale(x, cr), g.scale(z, -sr))
    zr = g.add(g.scale(x, sr), g.scale(z, cr))
    terms = [
        None,                      # constant
        xr, y, zr,
        g.mul(xr, y), g.mul(y, zr), g.mul(xr, zr),
        g.sub(g.mul(xr, xr), g.mul(y, y)),
        g.mul(zr, zr),
    ]
    acc = g.const(poly[0].reshape(1, 3))
    for coeff, term in zip(poly[1:], terms[1:]):
        acc = g.add(acc, g.mul(term, g.const(coeff.reshape(1, 3))))
    return acc


def build_render_graph(gbuffer: GBuffer, penv: PrefilteredEnv, sample: SceneSample,
                       background=(1.0, 1.0, 1.0)):
    """Fresh graph with the four texture maps as gradient inputs.

    Returns (graph, input names). Output 'image' is the linear render.
    """
    g = gt.Graph()
    tex_nodes = {name: g.input(name, requires_grad=True)
                 for name in ("diffuse", "roughness", "metalness", "normal")}
    image = build_shading(g, tex_nodes, gbuffer, penv, sample, background)
    g.output("image", image)
    return g, ("diffuse", "roughness", "metalness", "normal")


def shade(gbuffer: GBuffer, textures: TextureSet, penv: PrefilteredEnv,
          sample: SceneSample, background=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Forward-only shading of a texture set; returns the linear HxWx3 image."""
    g, names = build_render_graph(gbuffer, penv, sample, background)
    try:
        out = gt.forward(g, {n: textures.map(n) for n in names})
    except gt.GraphError as exc:
        raise NumericalError(f"shading failed: {exc}") from exc
    return out["image"]


def shade_grad(gbuffer: GBuffer, textures: TextureSet, penv: PrefilteredEnv,
               sample: SceneSample, image_grad: np.ndarray,
               background=(1.0, 1.0, 1.0)):
    """Convenience VJP: gradients of <image_grad, image> per texture map."""
    g, names = build_render_graph(gbuffer, penv, sample, background)
    gt.forward(g, {n: textures.map(n) for n in names})
    return gt.backward(g, image_grad)


def tonemap(linear: np.ndarray, exposure: float = 1.0) -> np.ndarray:
    """Linear render to display bytes: exposure, clamp, sRGB."""
    from ..assets.image_io import srgb_encode, to_u8
    return to_u8(srgb_encode(np.clip(linear * exposure, 0.0, 1.0)))
