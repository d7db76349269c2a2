"""Scene sampling: random cameras on a sphere plus lighting augmentation.

Azimuth and environment rotation are uniform on [0, 2pi); elevation and
radius are uniform within configured bounds. The default ranges are
package conventions chosen so the unit-diameter mesh fills a sensible
fraction of the frame.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass
class SceneSample:
    radius: float
    azimuth: float          # radians
    elevation: float        # radians, 0 = equator
    fov_y: float            # radians, vertical
    env_rotation: float     # radians about the vertical axis
    exposure: float = 1.0
    view_key: int | None = None  # set when drawn from a fixed view list

    def camera_position(self) -> np.ndarray:
        ce = math.cos(self.elevation)
        pos = (self.radius * ce * math.sin(self.azimuth),
               self.radius * math.sin(self.elevation),
               self.radius * ce * math.cos(self.azimuth))
        return np.asarray(pos, dtype=np.float64)

    def cache_key(self):
        """Identifies the rasterization-relevant part of the sample."""
        return (round(self.radius, 9), round(self.azimuth, 9),
                round(self.elevation, 9), round(self.fov_y, 9))


@dataclass
class SceneConfig:
    radius_range: tuple = (1.8, 2.6)
    elevation_range_deg: tuple = (-10.0, 45.0)
    fov_deg: float = 45.0
    env_rotation: bool = True
    exposure: float = 1.0
    background: tuple = (1.0, 1.0, 1.0)
    fixed_views: int | None = None  # draw from this many fixed cameras instead

    def validate(self):
        if not (0 < self.radius_range[0] <= self.radius_range[1]):
            raise ConfigError(f"empty radius range {self.radius_range}")
        if self.elevation_range_deg[0] > self.elevation_range_deg[1]:
            raise ConfigError(f"empty elevation range {self.elevation_range_deg}")
        if not (-89.0 <= self.elevation_range_deg[0] and self.elevation_range_deg[1] <= 89.0):
            raise ConfigError("elevation must stay within (-89, 89) degrees")
        if not (1.0 <= self.fov_deg <= 170.0):
            raise ConfigError(f"fov {self.fov_deg} out of range")
        return self


def sample_scene(rng: np.random.Generator, config: SceneConfig) -> SceneSample:
    config.validate()
    if config.fixed_views:
        key = int(rng.integers(0, config.fixed_views))
        views = fixed_view_samples(config, config.fixed_views)
        sample = views[key]
        if config.env_rotation:
            sample.env_rotation = float(rng.uniform(0.0, 2.0 * math.pi))
        return sample
    return SceneSample(
        radius=float(rng.uniform(*config.radius_range)),
        azimuth=float(rng.uniform(0.0, 2.0 * math.pi)),
        elevation=float(np.deg2rad(rng.uniform(*config.elevation_range_deg))),
        fov_y=float(np.deg2rad(config.fov_deg)),
        env_rotation=float(rng.uniform(0.0, 2.0 * math.pi)) if config.env_rotation else 0.0,
        exposure=config.exposure,
    )


def fixed_view_samples(config: SceneConfig, count: int) -> list:
    """Deterministic cameras: evenly spaced azimuths at alternating elevations."""
    config.validate()
    radius = 0.5 * (config.radius_range[0] + config.radius_range[1])
    lo, hi = config.elevation_range_deg
    elevations = (np.deg2rad(lo + 0.3 * (hi - lo)), np.deg2rad(lo + 0.7 * (hi - lo)))
    views = []
    for k in range(count):
        views.append(SceneSample(
            radius=radius,
            azimuth=2.0 * math.pi * k / count,
            elevation=float(elevations[k % 2]),
            fov_y=float(np.deg2rad(config.fov_deg)),
            env_rotation=0.0,
            exposure=config.exposure,
            view_key=k,
        ))
    return views


def look_at_matrix(eye: np.ndarray, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> np.ndarray:
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, np.float64) - eye
    norm = np.linalg.norm(fwd)
    if norm < 1e-9:
        raise ConfigError("degenerate camera: eye coincides with target")
    fwd /= norm
    right = np.cross(fwd, np.asarray(up, np.float64))
    rn = np.linalg.norm(right)
    if rn < 1e-9:  # looking straight along up: pick another up
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        rn = np.linalg.norm(right)
    right /= rn
    true_up = np.cross(right, fwd)
    view = np.eye(4)
    view[0, :3] = right
    view[1, :3] = true_up
    view[2, :3] = -fwd
    view[:3, 3] = -view[:3, :3] @ eye
    return view


def perspective_matrix(fov_y: float, aspect: float, near=0.05, far=100.0) -> np.ndarray:
    f = 1.0 / math.tan(fov_y / 2.0)
    proj = np.zeros((4, 4))
    proj[0, 0] = f / aspect
    proj[1, 1] = f
    proj[2, 2] = (far + near) / (near - far)
    proj[2, 3] = 2.0 * far * near / (near - far)
    proj[3, 2] = -1.0
    return proj
