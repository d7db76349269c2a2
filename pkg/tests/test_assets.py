import struct
import zlib

import numpy as np
import pytest

from texdistill.assets import (
    load_obj, uv_sphere, box_mesh,
    EnvironmentMap, load_hdr, write_hdr,
    read_exr, write_exr,
    load_png, save_png, srgb_encode, srgb_decode,
    write_texture_set, load_texture_set,
)
from texdistill.errors import AssetError
from texdistill.textures import TextureSet, constant_texture_set, flat_normal


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_obj_single_triangle(tmp_path):
    p = write(tmp_path, "tri.obj", """
v 0 0 0
v 1 0 0
v 0 1 0
vt 0 0
vt 1 0
vt 0 1
f 1/1 2/2 3/3
""")
    mesh = load_obj(p)
    assert mesh.faces.shape == (1, 3)
    assert len(mesh.positions) == 3
    assert mesh.uvs.shape == (3, 2)


def test_obj_quad_becomes_two_triangles(tmp_path):
    p = write(tmp_path, "quad.obj", """
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
vt 0 0
vt 1 0
vt 1 1
vt 0 1
f 1/1 2/2 3/3 4/4
""")
    mesh = load_obj(p)
    assert mesh.faces.shape == (2, 3)


def test_obj_without_uv_rejected(tmp_path):
    p = write(tmp_path, "nouv.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    with pytest.raises(AssetError, match="not UV-unwrapped"):
        load_obj(p)


def test_obj_malformed_line_reports_lineno(tmp_path):
    p = write(tmp_path, "bad.obj", "v 0 0 0\nv zero zero one\n")
    with pytest.raises(AssetError, match="line 2"):
        load_obj(p)


def test_obj_normalized_to_unit_diameter(tmp_path):
    p = write(tmp_path, "big.obj", """
v -10 0 0
v 10 0 0
v 0 10 0
vt 0 0
vt 1 0
vt 0 1
f 1/1 2/2 3/3
""")
    mesh = load_obj(p)
    assert np.linalg.norm(mesh.positions, axis=1).max() <= 0.5 + 1e-6


def test_procedural_meshes_valid():
    for mesh in (uv_sphere(8, 16), box_mesh()):
        mesh.validate()
        assert np.abs(np.linalg.norm(mesh.normals, axis=1) - 1).max() < 1e-3
        assert np.abs(np.linalg.norm(mesh.tangents[:, :3], axis=1) - 1).max() < 1e-3
        # tangents orthogonal to normals
        assert np.abs(np.sum(mesh.tangents[:, :3] * mesh.normals, axis=1)).max() < 1e-3
        assert np.linalg.norm(mesh.positions, axis=1).max() <= 0.5 + 1e-5


# -- Radiance HDR ---------------------------------------------------------

def test_rgbe_decode_example(tmp_path):
    # flat file, width 2 (< 8 forces flat scanlines)
    pixels = bytes([128, 64, 32, 130, 0, 0, 0, 0])
    p = tmp_path / "two.hdr"
    p.write_bytes(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y 1 +X 2\n" + pixels)
    env = load_hdr(p)
    np.testing.assert_allclose(env.radiance[0, 0], [2.0, 1.0, 0.5])
    np.testing.assert_allclose(env.radiance[0, 1], [0.0, 0.0, 0.0])


def test_hdr_bad_magic(tmp_path):
    p = tmp_path / "bad.hdr"
    p.write_bytes(b"NOTHDR\n")
    with pytest.raises(AssetError, match="magic"):
        load_hdr(p)


def test_hdr_truncated_scanline(tmp_path):
    p = tmp_path / "trunc.hdr"
    p.write_bytes(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y 2 +X 2\n" + bytes(8))
    with pytest.raises(AssetError, match="truncated"):
        load_hdr(p)


def test_hdr_roundtrip_quantization(tmp_path):
    rng = np.random.default_rng(0)
    rad = (rng.uniform(0, 4, (16, 32, 3)) ** 2).astype(np.float32)
    rad[0, 0] = 0
    env = EnvironmentMap(rad)
    p = tmp_path / "rt.hdr"
    write_hdr(env, p)
    back = load_hdr(p)
    # one RGBE quantization step: 2^(e-8) where e is the shared exponent
    v = rad.max(axis=-1)
    step = np.zeros_like(v)
    nz = v >= 1e-32
    _, exp = np.frexp(v[nz])
    step[nz] = np.exp2(exp - 8.0)
    err = np.abs(back.radiance - rad).max(axis=-1)
    assert np.all(err <= step + 1e-9)


def test_hdr_rle_roundtrip(tmp_path):
    # wide constant rows exercise the RLE writer paths
    rad = np.zeros((4, 64, 3), dtype=np.float32)
    rad[:, :32] = 1.5
    rad[:, 32:] = np.linspace(0, 2, 32)[None, :, None]
    p = tmp_path / "rle.hdr"
    write_hdr(EnvironmentMap(rad), p)
    back = load_hdr(p)
    assert back.radiance.shape == (4, 64, 3)
    assert np.abs(back.radiance - rad).max() < 0.02


# -- EXR ------------------------------------------------------------------

def test_exr_roundtrip_bitexact(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.normal(size=(7, 5, 3)).astype(np.float32)
    p = tmp_path / "a.exr"
    write_exr(p, img)
    back, names = read_exr(p)
    assert names == ["R", "G", "B"]
    np.testing.assert_array_equal(back, img)


def test_exr_single_channel(tmp_path):
    img = np.arange(12, dtype=np.float32).reshape(3, 4, 1)
    p = tmp_path / "y.exr"
    write_exr(p, img)
    back, names = read_exr(p)
    assert names == ["Y"]
    np.testing.assert_array_equal(back, img)


def _write_zips_exr(path, image):
    """Independent ZIPS writer used to exercise the compressed read path."""
    h, w, c = image.shape
    names = sorted(["R", "G", "B"][:c]) if c == 3 else ["Y"]

    def attr(name, typ, data):
        return name.encode() + b"\0" + typ.encode() + b"\0" + struct.pack("<I", len(data)) + data

    chl = b""
    for n in names:
        chl += n.encode() + b"\0" + struct.pack("<iBBBBii", 2, 0, 0, 0, 0, 1, 1)
    chl += b"\0"
    box = struct.pack("<iiii", 0, 0, w - 1, h - 1)
    header = (attr("channels", "chlist", chl)
              + attr("compression", "compression", b"\x02")
              + attr("dataWindow", "box2i", box)
              + attr("displayWindow", "box2i", box)
              + attr("lineOrder", "lineOrder", b"\0")
              + attr("pixelAspectRatio", "float", struct.pack("<f", 1.0))
              + attr("screenWindowCenter", "v2f", struct.pack("<ff", 0, 0))
              + attr("screenWindowWidth", "float", struct.pack("<f", 1.0))
              + b"\0")
    order = sorted(range(c), key=lambda i: (["R", "G", "B"][:c])[i]) if c == 3 else [0]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", 20000630, 2))
        fh.write(header)
        tpos = fh.tell()
        fh.write(b"\0" * 8 * h)
        offsets = []
        for y in range(h):
            line = b"".join(image[y, :, i].tobytes() for i in order)
            arr = np.frombuffer(line, np.uint8)
            half = (len(arr) + 1) // 2
            inter = np.concatenate([arr[0::2], arr[1::2]])
            delta = inter.astype(np.int16)
            delta[1:] = delta[1:] - inter[:-1].astype(np.int16) + 128
            comp = zlib.compress(delta.astype(np.uint8).tobytes())
            offsets.append(fh.tell())
            fh.write(struct.pack("<ii", y, len(comp)))
            fh.write(comp)
        fh.seek(tpos)
        fh.write(struct.pack(f"<{h}Q", *offsets))


def test_exr_zip_read(tmp_path):
    rng = np.random.default_rng(2)
    img = rng.normal(size=(6, 9, 3)).astype(np.float32)
    p = tmp_path / "z.exr"
    _write_zips_exr(p, img)
    back, _ = read_exr(p)
    np.testing.assert_array_equal(back, img)


# -- PNG + texture sets ---------------------------------------------------

def test_srgb_inverse():
    x = np.linspace(0, 1, 257).astype(np.float32)
    np.testing.assert_allclose(srgb_decode(srgb_encode(x)), x, atol=1e-6)


def test_write_texture_set_encodings(tmp_path):
    res = 512
    tex = constant_texture_set(res, diffuse=(0.5, 0.5, 0.5), roughness=1.0, metalness=0.25)
    out = tmp_path / "maps"
    write_texture_set(tex, out)

    diff = load_png(out / "diffuse.png")
    assert diff[0, 0, 0] == 188  # sRGB encoding of linear 0.5

    rough = load_png(out / "roughness.png")
    assert rough[0, 0, 0] == 255

    normal = load_png(out / "normal.png")
    np.testing.assert_array_equal(normal[0, 0], [128, 128, 255])

    # EXR round-trip preserves exact values
    back = load_texture_set(out)
    np.testing.assert_array_equal(back.diffuse, tex.diffuse)
    np.testing.assert_array_equal(back.roughness, tex.roughness)
    np.testing.assert_array_equal(back.normal, tex.normal)


def test_texture_set_validation():
    res = 512
    bad = TextureSet(
        diffuse=np.full((res, res, 3), 1.5, np.float32),
        roughness=np.full((res, res, 1), 0.5, np.float32),
        metalness=np.full((res, res, 1), 0.0, np.float32),
        normal=flat_normal(res),
    )
    with pytest.raises(AssetError, match="diffuse"):
        bad.validate()
