"""Split-sum image-based lighting: prefiltered radiance, irradiance, BRDF LUT.

The specular integral is factored into a roughness-indexed mip chain of
GGX-convolved radiance and a 2D scale/bias table over (NoV, roughness).
The diffuse term uses a cosine-convolved irradiance map that already
includes the 1/pi Lambert normalization, so a unit-radiance environment
yields irradiance exactly 1.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..assets.hdr import EnvironmentMap, load_hdr

DEFAULT_MIPS = 6
DEFAULT_PREFILTER_SAMPLES = 256
DEFAULT_LUT_RESOLUTION = 64
DEFAULT_LUT_SAMPLES = 2048
IRRADIANCE_SIZE = (16, 32)  # H, W


@dataclass
class PrefilteredEnv:
    levels: list            # K maps, level k convolved at roughness k/(K-1)
    irradiance: np.ndarray  # HxWx3 cosine-convolved, includes 1/pi
    lut: np.ndarray         # RxRx2 (A, B) over (NoV, roughness)
    sh_coeffs: np.ndarray = None  # 9x3 polynomial form of the irradiance

    def __post_init__(self):
        if self.sh_coeffs is None:
            self.sh_coeffs = np.zeros((9, 3), np.float32)

    @property
    def mips(self):
        return len(self.levels)


def _equirect_dirs(h, w):
    """Unit direction per texel center of an HxW equirectangular map."""
    v = (np.arange(h) + 0.5) / h
    u = (np.arange(w) + 0.5) / w
    theta = v * np.pi               # polar from +y
    phi = (u - 0.5) * 2.0 * np.pi   # matches u = atan2(x, -z)/2pi + 0.5
    st = np.sin(theta)[:, None]
    y = np.cos(theta)[:, None] * np.ones((1, w))
    x = st * np.sin(phi)[None, :]
    z = -st * np.cos(phi)[None, :]
    return np.stack([x, y, z], axis=-1)


def _equirect_solid_angles(h, w):
    v = (np.arange(h) + 0.5) / h
    return (np.sin(v * np.pi) * (np.pi / h) * (2.0 * np.pi / w))[:, None] * np.ones((1, w))


def _fetch_bilinear(img, dirs):
    """Sample an equirectangular map at unit directions (repeat-u, clamp-v)."""
    h, w = img.shape[:2]
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    u = np.arctan2(x, -z) / (2.0 * np.pi) + 0.5
    v = np.arccos(np.clip(y, -1.0, 1.0)) / np.pi
    fx = u * w - 0.5
    fy = v * h - 0.5
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    ax = (fx - x0)[..., None]
    ay = (fy - y0)[..., None]
    x1 = (x0 + 1) % w
    x0 = x0 % w
    y1 = np.clip(y0 + 1, 0, h - 1)
    y0 = np.clip(y0, 0, h - 1)
    top = img[y0, x0] * (1 - ax) + img[y0, x1] * ax
    bot = img[y1, x0] * (1 - ax) + img[y1, x1] * ax
    return top * (1 - ay) + bot * ay


def _hammersley(n):
    """Deterministic low-discrepancy points in [0,1)^2 (van der Corput base 2)."""
    i = np.arange(n, dtype=np.uint32)
    bits = i.copy()
    bits = ((bits << np.uint32(16)) | (bits >> np.uint32(16)))
    bits = ((bits & np.uint32(0x55555555)) << np.uint32(1)) | ((bits & np.uint32(0xAAAAAAAA)) >> np.uint32(1))
    bits = ((bits & np.uint32(0x33333333)) << np.uint32(2)) | ((bits & np.uint32(0xCCCCCCCC)) >> np.uint32(2))
    bits = ((bits & np.uint32(0x0F0F0F0F)) << np.uint32(4)) | ((bits & np.uint32(0xF0F0F0F0)) >> np.uint32(4))
    bits = ((bits & np.uint32(0x00FF00FF)) << np.uint32(8)) | ((bits & np.uint32(0xFF00FF00)) >> np.uint32(8))
    return np.stack([i / n, bits.astype(np.float64) * 2.3283064365386963e-10], axis=1)


def _ggx_half_vectors(xi, roughness):
    """GGX importance-sampled half vectors around +z (alpha = roughness^2)."""
    a = roughness * roughness
    phi = 2.0 * np.pi * xi[:, 0]
    cos_t = np.sqrt((1.0 - xi[:, 1]) / (1.0 + (a * a - 1.0) * xi[:, 1]))
    sin_t = np.sqrt(np.maximum(1.0 - cos_t * cos_t, 0.0))
    return np.stack([np.cos(phi) * sin_t, np.sin(phi) * sin_t, cos_t], axis=1)


def _tangent_frames(dirs):
    flat = dirs.reshape(-1, 3)
    up = np.where(np.abs(flat[:, 2:3]) < 0.999,
                  np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    t = np.cross(up, flat)
    t /= np.maximum(np.linalg.norm(t, axis=1, keepdims=True), 1e-12)
    b = np.cross(flat, t)
    return t, b, flat


def prefilter_env(env: EnvironmentMap, mips: int = DEFAULT_MIPS,
                  samples_per_texel: int = DEFAULT_PREFILTER_SAMPLES,
                  lut_resolution: int = DEFAULT_LUT_RESOLUTION) -> PrefilteredEnv:
    """GGX-convolve the environment into a mip chain and build the LUT."""
    if mips < 2:
        raise ConfigError(f"prefilter needs at least 2 mip levels, got {mips}")
    env.validate()
    src = env.radiance.astype(np.float64)
    levels = [env.radiance.astype(np.float32)]
    xi = _hammersley(samples_per_texel)
    h0, w0 = src.shape[:2]
    for k in range(1, mips):
        h = max(h0 >> k, 2)
        w = max(w0 >> k, 4)
        roughness = k / (mips - 1)
        dirs = _equirect_dirs(h, w)
        t, b, n = _tangent_frames(dirs)
        halfs = _ggx_half_vectors(xi, roughness)
        acc = np.zeros((h * w, 3))
        wsum = np.zeros((h * w, 1))
        for s in range(samples_per_texel):
            hw = halfs[s, 0] * t + halfs[s, 1] * b + halfs[s, 2] * n
            # reflect view (= n) about the half vector
            l = 2.0 * np.sum(n * hw, axis=1, keepdims=True) * hw - n
            nol = np.sum(n * l, axis=1, keepdims=True)
            keep = nol > 0
            if not keep.any():
                continue
            radiance = _fetch_bilinear(src, l)
            acc += np.where(keep, radiance * nol, 0.0)
            wsum += np.where(keep, nol, 0.0)
        out = acc / np.maximum(wsum, 1e-12)
        levels.append(out.reshape(h, w, 3).astype(np.float32))

    irr = _cosine_irradiance(src)
    lut = env_brdf_lut(lut_resolution)
    return PrefilteredEnv(levels=levels, irradiance=irr, lut=lut,
                          sh_coeffs=sh9_irradiance_poly(src))


def sh9_irradiance_poly(src) -> np.ndarray:
    """Quadratic-polynomial irradiance (order-2 spherical harmonics).

    Returns 9x3 coefficients c such that irradiance(n)/pi per channel is
        c0 + c1 x + c2 y + c3 z + c4 xy + c5 yz + c6 xz
           + c7 (x^2 - y^2) + c8 z^2
    for unit n. Smooth in n everywhere, unlike an equirect map lookup,
    which is what shading differentiates through.
    """
    h, w = src.shape[:2]
    d = _equirect_dirs(h, w).reshape(-1, 3)
    dw = _equirect_solid_angles(h, w).reshape(-1, 1)
    x, y, z = d[:, 0:1], d[:, 1:2], d[:, 2:3]
    basis = np.concatenate([
        0.282095 * np.ones_like(x),
        0.488603 * y, 0.488603 * z, 0.488603 * x,
        1.092548 * x * y, 1.092548 * y * z,
        0.315392 * (3 * z * z - 1), 1.092548 * x * z,
        0.546274 * (x * x - y * y),
    ], axis=1)  # L00, L1-1, L10, L11, L2-2, L2-1, L20, L21, L22
    lm = basis.T @ (src.reshape(-1, 3) * dw)

    c1, c2, c3, c4, c5 = 0.429043, 0.511664, 0.743125, 0.886227, 0.247708
    poly = np.stack([
        c4 * lm[0] - c5 * lm[6],       # 1
        2 * c2 * lm[3],                # x
        2 * c2 * lm[1],                # y
        2 * c2 * lm[2],                # z
        2 * c1 * lm[4],                # xy
        2 * c1 * lm[5],                # yz
        2 * c1 * lm[7],                # xz
        c1 * lm[8],                    # x^2 - y^2
        c3 * lm[6],                    # z^2
    ]) / np.pi
    return poly.astype(np.float32)


def sh9_eval(poly: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Evaluate the 9x3 irradiance polynomial at unit directions (Nx3)."""
    x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
    terms = [np.ones_like(x), x, y, z, x * y, y * z, x * z,
             x * x - y * y, z * z]
    out = np.zeros((dirs.shape[0], poly.shape[1]), dtype=np.float64)
    for c, t in zip(poly, terms):
        out += t * c[None, :]
    return out


def _cosine_irradiance(src):
    """Exact quadrature of the cosine-weighted hemisphere integral / pi."""
    ih, iw = IRRADIANCE_SIZE
    out_dirs = _equirect_dirs(ih, iw).reshape(-1, 3)
    src_dirs = _equirect_dirs(*src.shape[:2]).reshape(-1, 3)
    dw = _equirect_solid_angles(*src.shape[:2]).reshape(-1, 1)
    flat = src.reshape(-1, 3) * dw
    irr = np.zeros((out_dirs.shape[0], 3))
    chunk = 256
    for i in range(0, out_dirs.shape[0], chunk):
        cosines = np.maximum(out_dirs[i:i + chunk] @ src_dirs.T, 0.0)
        irr[i:i + chunk] = cosines @ flat
    return (irr / np.pi).reshape(ih, iw, 3).astype(np.float32)


def env_brdf_lut(resolution: int = DEFAULT_LUT_RESOLUTION,
                 samples: int = DEFAULT_LUT_SAMPLES) -> np.ndarray:
    """Integrate the GGX+Smith+Schlick BRDF into (A, B) over (NoV, roughness).

    Rows index roughness on an endpoint-inclusive grid i/(R-1); columns
    index sqrt(NoV) on the same grid (the warp spreads the steep grazing
    region over more texels). NoV is floored at 1e-3 to keep the grazing
    column finite. Lookups use (sqrt(NoV), roughness).
    """
    if resolution < 16:
        raise ConfigError("LUT resolution must be at least 16")
    nov = np.maximum((np.arange(resolution) / (resolution - 1)) ** 2, 1e-3)
    rough = np.arange(resolution) / (resolution - 1)
    nov_g, rough_g = np.meshgrid(nov, rough)  # [row=rough, col=sqrt(nov)]
    nov_f = nov_g.reshape(-1)
    rough_f = rough_g.reshape(-1)

    v = np.stack([np.sqrt(1.0 - nov_f ** 2), np.zeros_like(nov_f), nov_f], axis=1)
    xi = _hammersley(samples)
    a_acc = np.zeros_like(nov_f)
    b_acc = np.zeros_like(nov_f)
    k_ibl = rough_f * rough_f / 2.0  # Smith Schlick-GGX, IBL convention k = alpha/2

    for s in range(samples):
        hv = _ggx_half_vectors_scalar(xi[s], rough_f)
        voh = np.sum(v * hv, axis=1)
        l = 2.0 * voh[:, None] * hv - v
        nol = l[:, 2]
        keep = nol > 0
        noh = np.maximum(hv[:, 2], 0.0)
        voh = np.maximum(voh, 0.0)
        g = _smith_g_ibl(nov_f, k_ibl) * _smith_g_ibl(np.maximum(nol, 1e-6), k_ibl)
        g_vis = g * voh / np.maximum(noh * nov_f, 1e-6)
        fc = (1.0 - voh) ** 5
        a_acc += np.where(keep, (1.0 - fc) * g_vis, 0.0)
        b_acc += np.where(keep, fc * g_vis, 0.0)

    lut = np.stack([a_acc, b_acc], axis=1) / samples
    lut = lut.reshape(resolution, resolution, 2)
    # 3-tap binomial smoothing: the NoL>0 indicator toggles sample sets
    # between texels, leaving slope noise that bilinear lookups turn into
    # gradient kinks; the blur's curvature bias is ~(1/R)^2 and immaterial
    lut = _blur121(_blur121(lut, axis=0), axis=1)
    return lut.astype(np.float32)


def _blur121(img, axis):
    pad = [(0, 0)] * img.ndim
    pad[axis] = (1, 1)
    p = np.pad(img, pad, mode="edge")
    lo = [slice(None)] * img.ndim
    mid = [slice(None)] * img.ndim
    hi = [slice(None)] * img.ndim
    lo[axis] = slice(0, -2)
    mid[axis] = slice(1, -1)
    hi[axis] = slice(2, None)
    return 0.25 * p[tuple(lo)] + 0.5 * p[tuple(mid)] + 0.25 * p[tuple(hi)]


def _ggx_half_vectors_scalar(xi_row, roughness):
    a = roughness * roughness
    phi = 2.0 * np.pi * xi_row[0]
    cos_t = np.sqrt((1.0 - xi_row[1]) / (1.0 + (a * a - 1.0) * xi_row[1]))
    sin_t = np.sqrt(np.maximum(1.0 - cos_t * cos_t, 0.0))
    return np.stack([np.cos(phi) * sin_t, np.sin(phi) * sin_t, cos_t], axis=1)


def _smith_g_ibl(ndot, k):
    return ndot / (ndot * (1.0 - k) + k)


# -- bundled light rigs ----------------------------------------------------

def make_training_env(width: int = 128) -> EnvironmentMap:
    """Single pronounced light plus weak ambient, for optimization runs."""
    h, w = width // 2, width
    dirs = _equirect_dirs(h, w)
    key_dir = np.array([0.5, 0.72, -0.48])
    key_dir /= np.linalg.norm(key_dir)
    cos = np.clip(dirs @ key_dir, -1.0, 1.0)
    key = np.exp((cos - 1.0) / 0.016)  # ~10 degree lobe
    ambient = 0.18 + 0.07 * np.clip(dirs[..., 1], 0.0, 1.0)  # faint sky gradient
    rad = ambient[..., None] * np.array([1.0, 1.0, 1.05]) \
        + key[..., None] * np.array([14.0, 13.4, 12.6])
    return EnvironmentMap(rad.astype(np.float32)).validate()


def make_studio_env(width: int = 128) -> EnvironmentMap:
    """Three softboxes and a floor bounce; evaluation lighting."""
    h, w = width // 2, width
    dirs = _equirect_dirs(h, w)
    rad = np.full((h, w, 3), 0.06)
    boxes = [
        (np.array([0.8, 0.55, 0.2]), 0.10, np.array([5.0, 5.0, 5.2])),
        (np.array([-0.75, 0.4, -0.5]), 0.16, np.array([2.6, 2.7, 3.0])),
        (np.array([0.0, 0.25, 0.97]), 0.22, np.array([1.6, 1.5, 1.4])),
    ]
    for center, width_cos, color in boxes:
        center = center / np.linalg.norm(center)
        cos = np.clip(dirs @ center, -1.0, 1.0)
        rad += (np.exp((cos - 1.0) / width_cos))[..., None] * color
    floor = np.clip(-dirs[..., 1], 0.0, 1.0) ** 2
    rad += floor[..., None] * np.array([0.22, 0.2, 0.18])
    return EnvironmentMap(rad.astype(np.float32)).validate()


BUILTIN_ENVS = {"train": make_training_env, "studio": make_studio_env}


def resolve_env(spec: str) -> EnvironmentMap:
    """Load `builtin:<name>` or a Radiance HDR path."""
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if name not in BUILTIN_ENVS:
            raise ConfigError(f"unknown builtin environment {name!r}; have {sorted(BUILTIN_ENVS)}")
        return BUILTIN_ENVS[name]()
    return load_hdr(spec)
