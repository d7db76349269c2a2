"""Asset parsing and serialization: OBJ meshes, Radiance HDR, EXR, PNG."""

from .mesh import Mesh, load_obj, uv_sphere, box_mesh
from .hdr import EnvironmentMap, load_hdr, write_hdr
from .exr import read_exr, write_exr
from .image_io import load_png, save_png, srgb_encode, srgb_decode
from .texture_io import write_texture_set, load_texture_set, load_diffuse_png

__all__ = [
    "Mesh", "load_obj", "uv_sphere", "box_mesh",
    "EnvironmentMap", "load_hdr", "write_hdr",
    "read_exr", "write_exr",
    "load_png", "save_png", "srgb_encode", "srgb_decode",
    "write_texture_set", "load_texture_set", "load_diffuse_png",
]
