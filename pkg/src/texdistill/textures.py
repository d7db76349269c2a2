"""The optimizable PBR map set and its value conventions.

All maps are linear float32. The normal map stores decoded tangent-space
unit vectors (z > 0); PNG export re-encodes them as (n+1)/2.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AssetError

VALID_RESOLUTIONS = (512, 1024, 2048, 4096)

# constants substituted for channels that are disabled in a run
DEFAULT_ROUGHNESS = 0.6
DEFAULT_METALNESS = 0.0

CHANNELS = ("diffuse", "roughness", "metalness", "normal")


@dataclass
class TextureSet:
    diffuse: np.ndarray    # HxWx3 in [0,1]
    roughness: np.ndarray  # HxWx1 in [0,1]
    metalness: np.ndarray  # HxWx1 in [0,1]
    normal: np.ndarray     # HxWx3 tangent space, unit, nz > 0

    @property
    def resolution(self) -> int:
        return self.diffuse.shape[0]

    def map(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def validate(self, strict_resolution: bool = True):
        res = self.resolution
        if strict_resolution and res not in VALID_RESOLUTIONS:
            raise AssetError(f"resolution must be one of {VALID_RESOLUTIONS}, got {res}")
        shapes = {"diffuse": 3, "roughness": 1, "metalness": 1, "normal": 3}
        for name, c in shapes.items():
            m = self.map(name)
            if m.shape != (res, res, c):
                raise AssetError(f"{name} map has shape {m.shape}, expected {(res, res, c)}")
            if not np.isfinite(m).all():
                raise AssetError(f"{name} map contains non-finite values")
        for name in ("diffuse", "roughness", "metalness"):
            m = self.map(name)
            if m.min() < 0.0 or m.max() > 1.0:
                raise AssetError(f"{name} map out of [0,1]: [{m.min()}, {m.max()}]")
        if self.normal[..., 2].min() <= 0.0:
            raise AssetError("normal map has non-positive z components")
        return self


def flat_normal(res: int) -> np.ndarray:
    n = np.zeros((res, res, 3), dtype=np.float32)
    n[..., 2] = 1.0
    return n


def constant_texture_set(res: int, diffuse=(0.5, 0.5, 0.5),
                         roughness=DEFAULT_ROUGHNESS, metalness=DEFAULT_METALNESS) -> TextureSet:
    return TextureSet(
        diffuse=np.full((res, res, 3), 0.0, dtype=np.float32) + np.asarray(diffuse, np.float32),
        roughness=np.full((res, res, 1), roughness, dtype=np.float32),
        metalness=np.full((res, res, 1), metalness, dtype=np.float32),
        normal=flat_normal(res),
    )
