"""Perspective rasterization into a G-buffer.

Depth-buffered edge-function rasterization with a top-left fill rule and
perspective-correct attribute interpolation. Coverage and barycentrics
are constants of the optimization (the mesh is fixed); no visibility
gradients exist anywhere downstream.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..assets.mesh import Mesh
from .camera import SceneSample, look_at_matrix, perspective_matrix

_NEAR = 0.05


@dataclass
class GBuffer:
    coverage: np.ndarray   # HxW bool
    uv: np.ndarray         # HxWx2
    tangent: np.ndarray    # HxWx3 world, unit
    bitangent: np.ndarray  # HxWx3 world, unit
    normal: np.ndarray     # HxWx3 world geometric, unit
    view_dir: np.ndarray   # HxWx3 unit, surface -> camera
    depth: np.ndarray      # HxW view-space distance, inf where uncovered

    @property
    def resolution(self):
        return self.coverage.shape[1], self.coverage.shape[0]

    def covered_indices(self) -> np.ndarray:
        """Flat pixel indices (row-major) of covered pixels."""
        return np.flatnonzero(self.coverage.reshape(-1))

    def gather(self, field: np.ndarray) -> np.ndarray:
        """Per-covered-pixel rows of an HxWxC field."""
        c = field.shape[2]
        return field.reshape(-1, c)[self.covered_indices()]

    def coverage_fraction(self) -> float:
        return float(self.coverage.mean())


def _is_top_left(ax, ay, bx, by):
    # canonical winding (orient2d(v0,v1,v2) > 0, y down):
    # top edge runs +x at constant y; left edges run -y
    return (ay == by and bx > ax) or (by < ay)


def rasterize(mesh: Mesh, sample: SceneSample, resolution) -> GBuffer:
    """Project and scan-convert the mesh; returns per-pixel shading inputs."""
    w, h = resolution
    if w < 16 or h < 16:
        raise ConfigError(f"render resolution {w}x{h} below 16x16")
    if sample.radius <= 0.0:
        raise ConfigError("degenerate camera: radius must be positive")

    eye = sample.camera_position()
    view = look_at_matrix(eye)
    proj = perspective_matrix(sample.fov_y, w / h)

    pos = mesh.positions.astype(np.float64)
    ones = np.ones((len(pos), 1))
    view_pos = (np.concatenate([pos, ones], axis=1) @ view.T)[:, :3]
    clip = np.concatenate([view_pos, ones], axis=1) @ proj.T
    wc = clip[:, 3]

    gb = GBuffer(
        coverage=np.zeros((h, w), dtype=bool),
        uv=np.zeros((h, w, 2), dtype=np.float32),
        tangent=np.zeros((h, w, 3), dtype=np.float32),
        bitangent=np.zeros((h, w, 3), dtype=np.float32),
        normal=np.zeros((h, w, 3), dtype=np.float32),
        view_dir=np.zeros((h, w, 3), dtype=np.float32),
        depth=np.full((h, w), np.inf, dtype=np.float32),
    )

    visible = wc > _NEAR
    ndc = np.zeros((len(pos), 2))
    ndc[visible] = clip[visible, :2] / wc[visible, None]
    sx = (ndc[:, 0] + 1.0) * 0.5 * w
    sy = (1.0 - ndc[:, 1]) * 0.5 * h

    hand = mesh.tangents[:, 3:4]
    bitan = np.cross(mesh.normals, mesh.tangents[:, :3]) * hand

    for tri in mesh.faces:
        if not visible[tri].all():
            continue  # no near-plane clipping: camera bounds keep the mesh in front
        x0, x1, x2 = sx[tri]
        y0, y1, y2 = sy[tri]
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area2 == 0.0:
            continue
        i0, i1, i2 = tri
        if area2 < 0.0:  # flip to canonical winding
            i1, i2 = i2, i1
            x1, x2, y1, y2 = x2, x1, y2, y1
            area2 = -area2

        lo_x = max(int(np.floor(min(x0, x1, x2))), 0)
        hi_x = min(int(np.ceil(max(x0, x1, x2))), w - 1)
        lo_y = max(int(np.floor(min(y0, y1, y2))), 0)
        hi_y = min(int(np.ceil(max(y0, y1, y2))), h - 1)
        if lo_x > hi_x or lo_y > hi_y:
            continue

        px, py = np.meshgrid(np.arange(lo_x, hi_x + 1) + 0.5,
                             np.arange(lo_y, hi_y + 1) + 0.5)
        e0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        e1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        e2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside = (
            ((e0 > 0) | ((e0 == 0) & _is_top_left(x1, y1, x2, y2)))
            & ((e1 > 0) | ((e1 == 0) & _is_top_left(x2, y2, x0, y0)))
            & ((e2 > 0) | ((e2 == 0) & _is_top_left(x0, y0, x1, y1)))
        )
        if not inside.any():
            continue

        l0 = e0[inside] / area2
        l1 = e1[inside] / area2
        l2 = e2[inside] / area2
        iw0, iw1, iw2 = wc[i0], wc[i1], wc[i2]
        inv_w = l0 / iw0 + l1 / iw1 + l2 / iw2
        depth = (1.0 / inv_w).astype(np.float32)

        yy, xx = np.nonzero(inside)
        yy = yy + lo_y
        xx = xx + lo_x
        closer = depth < gb.depth[yy, xx]
        if not closer.any():
            continue
        yy, xx, depth = yy[closer], xx[closer], depth[closer]
        p0 = (l0[closer] / iw0 / inv_w[closer]).astype(np.float32)
        p1 = (l1[closer] / iw1 / inv_w[closer]).astype(np.float32)
        p2 = (l2[closer] / iw2 / inv_w[closer]).astype(np.float32)

        def lerp(attr):
            return (attr[i0] * p0[:, None] + attr[i1] * p1[:, None] + attr[i2] * p2[:, None])

        gb.depth[yy, xx] = depth
        gb.coverage[yy, xx] = True
        gb.uv[yy, xx] = lerp(mesh.uvs)
        gb.normal[yy, xx] = lerp(mesh.normals)
        gb.tangent[yy, xx] = lerp(mesh.tangents[:, :3])
        gb.bitangent[yy, xx] = lerp(bitan)
        world = lerp(mesh.positions)
        vdir = eye[None, :] - world
        gb.view_dir[yy, xx] = (vdir / np.linalg.norm(vdir, axis=1, keepdims=True)).astype(np.float32)

    _orthonormalize(gb)
    return gb


def _orthonormalize(gb: GBuffer):
    """Re-unitize the interpolated TBN frame on covered pixels."""
    mask = gb.coverage
    n = gb.normal[mask]
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    t = gb.tangent[mask]
    t -= n * np.sum(t * n, axis=1, keepdims=True)
    tl = np.linalg.norm(t, axis=1, keepdims=True)
    bad = tl[:, 0] < 1e-6
    if bad.any():
        alt = np.cross(n[bad], np.array([0.0, 1.0, 0.0]))
        alt_l = np.linalg.norm(alt, axis=1, keepdims=True)
        fix = np.where(alt_l > 1e-6, alt / np.maximum(alt_l, 1e-12),
                       np.array([1.0, 0.0, 0.0]))
        t[bad] = fix
        tl = np.linalg.norm(t, axis=1, keepdims=True)
    t /= tl
    b = gb.bitangent[mask]
    sign = np.sign(np.sum(np.cross(n, t) * b, axis=1, keepdims=True))
    sign[sign == 0] = 1.0
    gb.normal[mask] = n
    gb.tangent[mask] = t
    gb.bitangent[mask] = np.cross(n, t) * sign
