"""Wavefront OBJ loading and procedural test meshes.

Meshes arrive UV-unwrapped; faces without texture coordinates are
rejected. On load the mesh is recentered and scaled to fit a
unit-diameter sphere so camera defaults are mesh-independent.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import AssetError


@dataclass
class Mesh:
    positions: np.ndarray  # Nx3
    uvs: np.ndarray        # Nx2
    normals: np.ndarray    # Nx3 unit
    tangents: np.ndarray   # Nx4, handedness in w
    faces: np.ndarray      # Mx3 int32

    def validate(self):
        n = len(self.positions)
        if self.faces.min(initial=0) < 0 or self.faces.max(initial=-1) >= n:
            raise AssetError("face indices out of range")
        norms = np.linalg.norm(self.normals, axis=1)
        if np.abs(norms - 1.0).max() > 1e-3:
            raise AssetError("vertex normals are not unit length")
        return self


def _parse_face_corner(token, nv, nvt, nvn, lineno):
    parts = token.split("/")
    try:
        vi = int(parts[0])
        ti = int(parts[1]) if len(parts) > 1 and parts[1] else None
        ni = int(parts[2]) if len(parts) > 2 and parts[2] else None
    except ValueError:
        raise AssetError(f"line {lineno}: malformed face token {token!r}")
    # OBJ indices are 1-based; negatives count from the end
    vi = vi - 1 if vi > 0 else nv + vi
    ti = None if ti is None else (ti - 1 if ti > 0 else nvt + ti)
    ni = None if ni is None else (ni - 1 if ni > 0 else nvn + ni)
    return vi, ti, ni


def load_obj(path) -> Mesh:
    """Parse an OBJ file into a triangulated, tangent-framed Mesh."""
    positions, uvs, normals = [], [], []
    corners = []  # (vi, ti, ni) triples per triangle corner

    with open(path, "r", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            tag = fields[0]
            try:
                if tag == "v":
                    positions.append([float(x) for x in fields[1:4]])
                elif tag == "vt":
                    uvs.append([float(x) for x in fields[1:3]])
                elif tag == "vn":
                    normals.append([float(x) for x in fields[1:4]])
                elif tag == "f":
                    face = [_parse_face_corner(t, len(positions), len(uvs), len(normals), lineno)
                            for t in fields[1:]]
                    if len(face) < 3:
                        raise AssetError(f"line {lineno}: face with fewer than 3 vertices")
                    for c in face:
                        if c[1] is None:
                            raise AssetError("mesh not UV-unwrapped")
                    for k in range(1, len(face) - 1):  # fan triangulation
                        corners.extend([face[0], face[k], face[k + 1]])
                # materials, groups, smoothing: ignored
            except AssetError:
                raise
            except Exception:
                raise AssetError(f"line {lineno}: malformed line {line!r}")

    if not corners:
        raise AssetError("no faces in OBJ file")
    positions = np.asarray(positions, dtype=np.float32)
    uvs = np.asarray(uvs, dtype=np.float32)
    normals = np.asarray(normals, dtype=np.float32) if normals else None

    for vi, ti, ni in corners:
        if not (0 <= vi < len(positions)) or not (0 <= ti < len(uvs)):
            raise AssetError("face index out of range")

    return build_mesh(positions, uvs, normals, corners)


def build_mesh(positions, uvs, normals, corners) -> Mesh:
    """Assemble a single-index mesh from OBJ-style corner triples."""
    remap = {}
    v_out, t_out, n_ref = [], [], []
    faces = []
    for vi, ti, ni in corners:
        key = (vi, ti, ni)
        if key not in remap:
            remap[key] = len(v_out)
            v_out.append(positions[vi])
            t_out.append(uvs[ti])
            n_ref.append(ni)
        faces.append(remap[key])
    v = np.asarray(v_out, dtype=np.float32)
    t = np.asarray(t_out, dtype=np.float32)
    f = np.asarray(faces, dtype=np.int32).reshape(-1, 3)

    n = _vertex_normals(v, f)
    if normals is not None and all(i is not None for i in n_ref):
        given = normals[np.asarray(n_ref)]
        norms = np.linalg.norm(given, axis=1, keepdims=True)
        good = norms[:, 0] > 1e-6
        n[good] = given[good] / norms[good]

    v = _normalize_extent(v)
    tan = _vertex_tangents(v, t, n, f)
    return Mesh(v, t, n, tan, f).validate()


def _vertex_normals(v, f):
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    fn = np.cross(e1, e2)  # area-weighted
    n = np.zeros_like(v)
    for k in range(3):
        np.add.at(n, f[:, k], fn)
    lens = np.linalg.norm(n, axis=1, keepdims=True)
    lens[lens < 1e-12] = 1.0
    n = n / lens
    n[np.all(n == 0, axis=1)] = (0, 0, 1)
    return n.astype(np.float32)


def _vertex_tangents(v, uv, n, f):
    """Per-vertex tangents averaged from per-face UV derivatives."""
    p0, p1, p2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    w0, w1, w2 = uv[f[:, 0]], uv[f[:, 1]], uv[f[:, 2]]
    e1, e2 = p1 - p0, p2 - p0
    d1, d2 = w1 - w0, w2 - w0
    det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
    det = np.where(np.abs(det) < 1e-12, 1e-12, det)
    r = (1.0 / det)[:, None]
    t_face = r * (d2[:, 1:2] * e1 - d1[:, 1:2] * e2)
    b_face = r * (d1[:, 0:1] * e2 - d2[:, 0:1] * e1)

    t_acc = np.zeros_like(v)
    b_acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(t_acc, f[:, k], t_face)
        np.add.at(b_acc, f[:, k], b_face)

    # Gram-Schmidt against the normal; fall back to any perpendicular
    t_acc -= n * np.sum(t_acc * n, axis=1, keepdims=True)
    lens = np.linalg.norm(t_acc, axis=1, keepdims=True)
    bad = lens[:, 0] < 1e-8
    if bad.any():
        alt = np.cross(n[bad], np.array([0.0, 1.0, 0.0], dtype=np.float32))
        alt_len = np.linalg.norm(alt, axis=1, keepdims=True)
        alt = np.where(alt_len > 1e-6, alt / np.maximum(alt_len, 1e-12),
                       np.array([1.0, 0.0, 0.0], dtype=np.float32))
        t_acc[bad] = alt
        lens = np.linalg.norm(t_acc, axis=1, keepdims=True)
    t_unit = t_acc / lens
    hand = np.sign(np.sum(np.cross(n, t_unit) * b_acc, axis=1))
    hand[hand == 0] = 1.0
    return np.concatenate([t_unit, hand[:, None]], axis=1).astype(np.float32)


def _normalize_extent(v):
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    radius = np.linalg.norm(v - center, axis=1).max()
    if radius < 1e-12:
        raise AssetError("degenerate mesh: zero spatial extent")
    return ((v - center) * (0.5 / radius)).astype(np.float32)


# -- procedural meshes (used by tests and the builtin: mesh names) --------

def uv_sphere(n_lat: int = 32, n_lon: int = 64) -> Mesh:
    """Equirectangular-unwrapped sphere; duplicated seam and pole rows."""
    lat = np.linspace(0.0, np.pi, n_lat + 1)
    lon = np.linspace(0.0, 2 * np.pi, n_lon + 1)
    positions, uvs, corners = [], [], []
    for i, th in enumerate(lat):
        for j, ph in enumerate(lon):
            p = (np.sin(th) * np.sin(ph), np.cos(th), np.sin(th) * np.cos(ph))
            positions.append(p)
            uvs.append((j / n_lon, i / n_lat))

    def vid(i, j):
        return i * (n_lon + 1) + j

    for i in range(n_lat):
        for j in range(n_lon):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j), vid(i + 1, j + 1)
            if i > 0:
                corners.extend([(a, a, None), (c, c, None), (b, b, None)])
            if i < n_lat - 1:
                corners.extend([(b, b, None), (c, c, None), (d, d, None)])
    return build_mesh(np.asarray(positions, np.float32), np.asarray(uvs, np.float32),
                      None, corners)


def box_mesh() -> Mesh:
    """Unit cube with a 3x2 UV atlas, one cell per face."""
    # face: (axis normal, u axis, v axis)
    tris = []
    positions, uvs = [], []
    frames = [
        ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
        ((0, 0, -1), (-1, 0, 0), (0, 1, 0)),
        ((1, 0, 0), (0, 0, -1), (0, 1, 0)),
        ((-1, 0, 0), (0, 0, 1), (0, 1, 0)),
        ((0, 1, 0), (1, 0, 0), (0, 0, -1)),
        ((0, -1, 0), (1, 0, 0), (0, 0, 1)),
    ]
    for fi, (n, ux, vx) in enumerate(frames):
        n, ux, vx = np.array(n, float), np.array(ux, float), np.array(vx, float)
        cell_u, cell_v = fi % 3, fi // 3
        base = len(positions)
        for dv in (-1, 1):
            for du in (-1, 1):
                positions.append(0.5 * (n + du * ux + dv * vx))
                uvs.append(((cell_u + (du + 1) / 2 * 0.96 + 0.02) / 3,
                            (cell_v + (dv + 1) / 2 * 0.96 + 0.02) / 2))
        for t in ((0, 1, 2), (2, 1, 3)):
            tris.extend(base + k for k in t)
    corners = [(i, i, None) for i in tris]
    return build_mesh(np.asarray(positions, np.float32), np.asarray(uvs, np.float32),
                      None, corners)


BUILTIN_MESHES = {"sphere": uv_sphere, "box": box_mesh}


def resolve_mesh(spec: str) -> Mesh:
    """Load `builtin:<name>` or an OBJ path."""
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if name not in BUILTIN_MESHES:
            raise AssetError(f"unknown builtin mesh {name!r}; have {sorted(BUILTIN_MESHES)}")
        return BUILTIN_MESHES[name]()
    return load_obj(spec)
