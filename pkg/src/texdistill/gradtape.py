"""Reverse-mode automatic differentiation over image-valued numpy graphs.

A Graph is built once (define-then-run), executed with `forward`, and
differentiated with `backward`. Arrays are float32 throughout; gradients
are accumulated in float32 as well. The op set is fixed: elementwise
arithmetic, a few activations, small-vector geometry helpers, texture
sampling, convolution and resampling for the image-prior network, and a
fused environment-map lookup.

Only inputs declared with requires_grad=True receive gradients; every
other tensor (rasterizer products, environment maps, lookup tables) is a
constant of the graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GraphError(Exception):
    """Raised for malformed graphs, shape mismatches or non-finite values."""

    def __init__(self, message, node=None):
        if node is not None:
            message = f"node {node}: {message}"
        super().__init__(message)
        self.node = node


@dataclass
class Tensor:
    """A named array entering or leaving a graph."""

    data: np.ndarray
    requires_grad: bool = False

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)

    @property
    def shape(self):
        return list(self.data.shape)


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        x = x.data
    return np.ascontiguousarray(x, dtype=np.float32)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.astype(np.float32, copy=False)


@dataclass
class _Node:
    kind: str
    inputs: tuple
    params: dict = field(default_factory=dict)
    name: str = ""

    def label(self, idx):
        return f"#{idx}:{self.kind}" + (f"({self.name})" if self.name else "")


class Graph:
    """Acyclic computation graph over float32 arrays.

    Nodes are referenced by integer id; builder methods return ids. A graph
    instance caches activations from its last `forward` call, so it must not
    be shared across concurrent executions (distinct instances may run in
    parallel).
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.outputs: dict[str, int] = {}
        self._input_ids: dict[str, int] = {}
        self._values: list | None = None

    # -- construction -------------------------------------------------

    def _push(self, kind, inputs, params=None, name=""):
        for i in inputs:
            if not (0 <= i < len(self.nodes)):
                raise GraphError(f"unknown input node id {i} for op {kind}")
        self.nodes.append(_Node(kind, tuple(inputs), params or {}, name))
        return len(self.nodes) - 1

    def input(self, name: str, requires_grad: bool = False) -> int:
        if name in self._input_ids:
            raise GraphError(f"duplicate input name {name!r}")
        nid = self._push("input", (), {"requires_grad": requires_grad}, name)
        self._input_ids[name] = nid
        return nid

    def const(self, value) -> int:
        return self._push("const", (), {"value": _as_array(value)})

    def output(self, name: str, nid: int):
        if name in self.outputs:
            raise GraphError(f"duplicate output name {name!r}")
        self.outputs[name] = nid

    # elementwise ops
    def add(self, a, b):
        return self._push("add", (a, b))

    def sub(self, a, b):
        return self._push("sub", (a, b))

    def mul(self, a, b):
        return self._push("mul", (a, b))

    def scale(self, a, s: float):
        return self._push("scale", (a,), {"s": float(s)})

    def clamp(self, a, lo: float, hi: float):
        return self._push("clamp", (a,), {"lo": float(lo), "hi": float(hi)})

    def sigmoid(self, a):
        return self._push("sigmoid", (a,))

    def tanh(self, a):
        return self._push("tanh", (a,))

    def pow(self, a, p: float):
        return self._push("pow", (a,), {"p": float(p)})

    def mix(self, a, b, t):
        """a + t * (b - a), all broadcastable."""
        return self._push("mix", (a, b, t))

    # small-vector geometry over the last axis (size 3)
    def normalize3(self, a):
        return self._push("normalize3", (a,))

    def dot3(self, a, b):
        return self._push("dot3", (a, b))

    # shape plumbing
    def concat(self, parts, axis: int = -1):
        return self._push("concat", tuple(parts), {"axis": int(axis)})

    def slice_c(self, a, lo: int, hi: int):
        """Channel slice x[..., lo:hi]."""
        return self._push("slice_c", (a,), {"lo": int(lo), "hi": int(hi)})

    def reduce_mean(self, a):
        return self._push("reduce_mean", (a,))

    # sampling / resampling
    def bilinear_sample(self, tex, uv, wrap: str = "clamp", grid: str = "texel"):
        """Bilinear fetch. grid='texel' places sample centers at (i+0.5)/W;
        grid='corner' spans texel centers across [0,1] (endpoint-inclusive,
        clamp only), so in-range uv never hits the flat edge extension."""
        if wrap not in ("repeat", "clamp"):
            raise GraphError(f"unknown wrap mode {wrap!r}")
        if grid not in ("texel", "corner"):
            raise GraphError(f"unknown grid mode {grid!r}")
        return self._push("bilinear_sample", (tex, uv), {"wrap": wrap, "grid": grid})

    def bicubic_sample(self, tex, uv):
        """Catmull-Rom fetch on the endpoint-inclusive grid (clamped).

        C1 in uv, unlike bilinear; used where the lookup coordinate itself
        carries gradients (BRDF table)."""
        return self._push("bicubic_sample", (tex, uv))

    def conv2d(self, x, w, b=None, stride: int = 1, pad: int = 0):
        inputs = (x, w) if b is None else (x, w, b)
        return self._push("conv2d", inputs, {"stride": int(stride), "pad": int(pad)})

    def upsample2x(self, x):
        return self._push("upsample2x", (x,))

    def downsample_box(self, x):
        return self._push("downsample_box", (x,))

    def envmap_sample(self, levels, dirs, lod=None, rotation: float = 0.0):
        """Equirectangular lookup of a (mip chain of) radiance map(s).

        `levels` is a list of HxWx3 constants captured by the node; `dirs`
        holds unit directions (Nx3) and `lod` an optional Nx1 level
        coordinate in [0, K-1]. Gradients flow to dirs and lod only.
        """
        levels = [np.ascontiguousarray(l, dtype=np.float32) for l in levels]
        inputs = (dirs,) if lod is None else (dirs, lod)
        return self._push("envmap_sample", inputs, {"levels": levels, "rotation": float(rotation)})

    def compose_image(self, background, flat_idx, rows):
        """Scatter NxC rows into a copy of an HxWxC background at flat pixel indices."""
        bg = _as_array(background)
        idx = np.ascontiguousarray(flat_idx, dtype=np.int64)
        return self._push("compose_image", (rows,), {"background": bg, "idx": idx})

    # -- execution ------------------------------------------------------

    def _check(self, cond, msg, idx):
        if not cond:
            raise GraphError(msg, node=self.nodes[idx].label(idx))


def forward(graph: Graph, inputs: dict, check_finite: bool = True) -> dict:
    """Run the graph on named input arrays; returns named output arrays.

    Activations are cached on the graph for a subsequent `backward`.
    """
    bound = {}
    for name, val in inputs.items():
        if name not in graph._input_ids:
            raise GraphError(f"unknown input {name!r}")
        bound[name] = _as_array(val)
    missing = set(graph._input_ids) - set(bound)
    if missing:
        raise GraphError(f"unbound inputs: {sorted(missing)}")

    values = [None] * len(graph.nodes)
    for idx, node in enumerate(graph.nodes):
        args = [values[i] for i in node.inputs]
        try:
            with np.errstate(all="ignore"):  # non-finite results are caught below
                out = _FORWARD[node.kind](node, args, bound)
        except GraphError:
            raise
        except Exception as exc:  # shape errors from numpy surface with node id
            raise GraphError(str(exc), node=node.label(idx)) from exc
        if check_finite and not np.isfinite(np.sum(out)):
            raise GraphError("non-finite values in forward pass", node=node.label(idx))
        values[idx] = out
    graph._values = values
    return {name: values[nid] for name, nid in graph.outputs.items()}


def backward(graph: Graph, output_grads) -> dict:
    """Accumulate d<output_grads, outputs>/d(input) for requires_grad inputs.

    `output_grads` is either a dict {output name: array} or a single array
    when the graph has exactly one output. Inputs never touched by any
    path from the outputs receive exact zeros.
    """
    if graph._values is None:
        raise GraphError("backward called before forward")
    if not isinstance(output_grads, dict):
        if len(graph.outputs) != 1:
            raise GraphError("graph has multiple outputs; pass a dict of gradients")
        output_grads = {next(iter(graph.outputs)): output_grads}

    grads = [None] * len(graph.nodes)
    for name, g in output_grads.items():
        if name not in graph.outputs:
            raise GraphError(f"unknown output {name!r}")
        nid = graph.outputs[name]
        g = _as_array(g)
        if g.shape != graph._values[nid].shape:
            raise GraphError(
                f"output_grad shape {g.shape} does not match output shape "
                f"{graph._values[nid].shape}", node=graph.nodes[nid].label(nid))
        grads[nid] = g if grads[nid] is None else grads[nid] + g

    for idx in range(len(graph.nodes) - 1, -1, -1):
        g = grads[idx]
        if g is None:
            continue
        node = graph.nodes[idx]
        if node.kind in ("input", "const"):
            continue
        args = [graph._values[i] for i in node.inputs]
        in_grads = _BACKWARD[node.kind](node, args, graph._values[idx], g)
        for i, gi in zip(node.inputs, in_grads):
            if gi is None:
                continue
            gi = gi.astype(np.float32, copy=False)
            grads[i] = gi if grads[i] is None else grads[i] + gi

    result = {}
    for name, nid in graph._input_ids.items():
        if not graph.nodes[nid].params["requires_grad"]:
            continue
        g = grads[nid]
        if g is None:
            g = np.zeros_like(graph._values[nid])
        result[name] = g
    return result


# -- op kernels ----------------------------------------------------------

def _fw_input(node, args, bound):
    return bound[node.name]


def _fw_const(node, args, bound):
    return node.params["value"]


def _bilinear_setup(tex, uv, wrap, grid="texel"):
    h, w = tex.shape[0], tex.shape[1]
    if grid == "corner":
        x = np.clip(uv[:, 0], 0.0, 1.0) * (w - 1)
        y = np.clip(uv[:, 1], 0.0, 1.0) * (h - 1)
    else:
        x = uv[:, 0] * w - 0.5
        y = uv[:, 1] * h - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0).astype(np.float32)
    fy = (y - y0).astype(np.float32)
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    if wrap == "repeat" and grid == "texel":
        xi0, xi1 = x0 % w, (x0 + 1) % w
        yi0, yi1 = y0 % h, (y0 + 1) % h
    else:
        xi0 = np.clip(x0, 0, w - 1)
        xi1 = np.clip(x0 + 1, 0, w - 1)
        yi0 = np.clip(y0, 0, h - 1)
        yi1 = np.clip(y0 + 1, 0, h - 1)
    return (xi0, xi1, yi0, yi1, fx[:, None], fy[:, None])


def _fw_bilinear(node, args, bound):
    tex, uv = args
    if uv.ndim != 2 or uv.shape[1] != 2:
        raise ValueError(f"uv must be Nx2, got {uv.shape}")
    if tex.ndim != 3:
        raise ValueError(f"texture must be HxWxC, got {tex.shape}")
    xi0, xi1, yi0, yi1, fx, fy = _bilinear_setup(tex, uv, node.params["wrap"], node.params.get("grid", "texel"))
    t00 = tex[yi0, xi0]
    t10 = tex[yi0, xi1]
    t01 = tex[yi1, xi0]
    t11 = tex[yi1, xi1]
    top = t00 + fx * (t10 - t00)
    bot = t01 + fx * (t11 - t01)
    return top + fy * (bot - top)


def _bw_bilinear(node, args, out, g):
    tex, uv = args
    h, w = tex.shape[0], tex.shape[1]
    xi0, xi1, yi0, yi1, fx, fy = _bilinear_setup(tex, uv, node.params["wrap"], node.params.get("grid", "texel"))
    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    dtex = np.zeros_like(tex)
    np.add.at(dtex, (yi0, xi0), w00 * g)
    np.add.at(dtex, (yi0, xi1), w10 * g)
    np.add.at(dtex, (yi1, xi0), w01 * g)
    np.add.at(dtex, (yi1, xi1), w11 * g)

    t00 = tex[yi0, xi0]
    t10 = tex[yi0, xi1]
    t01 = tex[yi1, xi0]
    t11 = tex[yi1, xi1]
    # d(out)/dx and d(out)/dy in texel units, then to uv units
    ddx = (1 - fy) * (t10 - t00) + fy * (t11 - t01)
    ddy = (1 - fx) * (t01 - t00) + fx * (t11 - t10)
    if node.params.get("grid", "texel") == "corner":
        su, sv = w - 1, h - 1
        in_u = ((uv[:, 0] > 0.0) & (uv[:, 0] < 1.0)).astype(np.float32)
        in_v = ((uv[:, 1] > 0.0) & (uv[:, 1] < 1.0)).astype(np.float32)
    else:
        su, sv = w, h
        in_u = in_v = 1.0
    du = np.sum(g * ddx, axis=1) * su * in_u
    dv = np.sum(g * ddy, axis=1) * sv * in_v
    duv = np.stack([du, dv], axis=1)
    return dtex, duv


def _cubic_weights(t):
    """Catmull-Rom weights and their derivatives for fractional offsets t."""
    t2 = t * t
    t3 = t2 * t
    w = (0.5 * (-t3 + 2 * t2 - t),
         0.5 * (3 * t3 - 5 * t2 + 2),
         0.5 * (-3 * t3 + 4 * t2 + t),
         0.5 * (t3 - t2))
    dw = (0.5 * (-3 * t2 + 4 * t - 1),
          0.5 * (9 * t2 - 10 * t),
          0.5 * (-9 * t2 + 8 * t + 1),
          0.5 * (3 * t2 - 2 * t))
    return w, dw


def _fw_bicubic(node, args, bound):
    tex, uv = args
    h, w = tex.shape[0], tex.shape[1]
    x = np.clip(uv[:, 0], 0.0, 1.0) * (w - 1)
    y = np.clip(uv[:, 1], 0.0, 1.0) * (h - 1)
    x1 = np.floor(x).astype(np.int64)
    y1 = np.floor(y).astype(np.int64)
    wx, _ = _cubic_weights((x - x1).astype(np.float32))
    wy, _ = _cubic_weights((y - y1).astype(np.float32))
    out = np.zeros((uv.shape[0], tex.shape[2]), dtype=np.float32)
    for i in range(4):
        yi = np.clip(y1 + i - 1, 0, h - 1)
        row = np.zeros_like(out)
        for j in range(4):
            xj = np.clip(x1 + j - 1, 0, w - 1)
            row += wx[j][:, None] * tex[yi, xj]
        out += wy[i][:, None] * row
    return out


def _bw_bicubic(node, args, out, g):
    tex, uv = args
    h, w = tex.shape[0], tex.shape[1]
    x = np.clip(uv[:, 0], 0.0, 1.0) * (w - 1)
    y = np.clip(uv[:, 1], 0.0, 1.0) * (h - 1)
    x1 = np.floor(x).astype(np.int64)
    y1 = np.floor(y).astype(np.int64)
    fx = (x - x1).astype(np.float32)
    fy = (y - y1).astype(np.float32)
    wx, dwx = _cubic_weights(fx)
    wy, dwy = _cubic_weights(fy)
    dtex = np.zeros_like(tex)
    du = np.zeros(uv.shape[0], dtype=np.float32)
    dv = np.zeros(uv.shape[0], dtype=np.float32)
    for i in range(4):
        yi = np.clip(y1 + i - 1, 0, h - 1)
        for j in range(4):
            xj = np.clip(x1 + j - 1, 0, w - 1)
            tij = tex[yi, xj]
            gc = np.sum(g * tij, axis=1)
            np.add.at(dtex, (yi, xj), (wy[i] * wx[j])[:, None] * g)
            du += gc * wy[i] * dwx[j]
            dv += gc * dwy[i] * wx[j]
    in_u = ((uv[:, 0] > 0.0) & (uv[:, 0] < 1.0)).astype(np.float32)
    in_v = ((uv[:, 1] > 0.0) & (uv[:, 1] < 1.0)).astype(np.float32)
    duv = np.stack([du * (w - 1) * in_u, dv * (h - 1) * in_v], axis=1)
    return dtex, duv


def _im2col(x, kh, kw, stride, pad):
    h, w, c = x.shape
    if pad:
        xp = np.zeros((h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
        xp[pad:pad + h, pad:pad + w] = x
        x = xp
    ho = (x.shape[0] - kh) // stride + 1
    wo = (x.shape[1] - kw) // stride + 1
    sr, sc, sch = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, shape=(ho, wo, kh, kw, c),
        strides=(sr * stride, sc * stride, sr, sc, sch), writeable=False)
    cols = np.ascontiguousarray(win).reshape(ho * wo, kh * kw * c)
    return cols, ho, wo


def _fw_conv2d(node, args, bound):
    x, wgt = args[0], args[1]
    kh, kw, cin, cout = wgt.shape
    if x.ndim != 3 or x.shape[2] != cin:
        raise ValueError(f"conv2d input {x.shape} incompatible with weight {wgt.shape}")
    s, p = node.params["stride"], node.params["pad"]
    cols, ho, wo = _im2col(x, kh, kw, s, p)
    node.params["_cols"] = cols  # reused by backward
    out = cols @ wgt.reshape(kh * kw * cin, cout)
    if len(args) == 3:
        out = out + args[2]
    return out.reshape(ho, wo, cout)


def _bw_conv2d(node, args, out, g):
    x, wgt = args[0], args[1]
    kh, kw, cin, cout = wgt.shape
    s, p = node.params["stride"], node.params["pad"]
    ho, wo = g.shape[0], g.shape[1]
    gflat = np.ascontiguousarray(g.reshape(ho * wo, cout))
    cols = node.params.get("_cols")
    if cols is None or cols.shape != (ho * wo, kh * kw * cin):
        cols, _, _ = _im2col(x, kh, kw, s, p)
    dw = (cols.T @ gflat).reshape(kh, kw, cin, cout)
    db = gflat.sum(axis=0) if len(args) == 3 else None

    if s == 1:
        # dx is the correlation of g with the spatially flipped kernel
        w_rot = np.ascontiguousarray(wgt[::-1, ::-1].transpose(0, 1, 3, 2))
        gcols, gh, gw = _im2col(g, kh, kw, 1, kh - 1 - p)
        dx = (gcols @ w_rot.reshape(kh * kw * cout, cin)).reshape(gh, gw, cin)
    else:
        dcols = gflat @ wgt.reshape(kh * kw * cin, cout).T
        dcols = dcols.reshape(ho, wo, kh, kw, cin)
        hp, wp = x.shape[0] + 2 * p, x.shape[1] + 2 * p
        dxp = np.zeros((hp, wp, cin), dtype=np.float32)
        for i in range(kh):
            for j in range(kw):
                dxp[i:i + ho * s:s, j:j + wo * s:s] += dcols[:, :, i, j]
        dx = dxp[p:hp - p, p:wp - p] if p else dxp
    if db is None:
        return dx, dw
    return dx, dw, db


def _resample_weights(n_out, n_in, factor):
    """1D bilinear resize indices/weights with half-texel alignment."""
    x = (np.arange(n_out, dtype=np.float64) + 0.5) / factor - 0.5
    i0 = np.floor(x).astype(np.int64)
    f = (x - i0).astype(np.float32)
    i1 = np.clip(i0 + 1, 0, n_in - 1)
    i0 = np.clip(i0, 0, n_in - 1)
    return i0, i1, f


def _fw_upsample2x(node, args, bound):
    x = args[0]
    h, w = x.shape[0], x.shape[1]
    r0, r1, fr = _resample_weights(2 * h, h, 2.0)
    c0, c1, fc = _resample_weights(2 * w, w, 2.0)
    rows = x[r0] * (1 - fr)[:, None, None] + x[r1] * fr[:, None, None]
    out = rows[:, c0] * (1 - fc)[None, :, None] + rows[:, c1] * fc[None, :, None]
    return out


def _upsample2x_adjoint_rows(g):
    """Adjoint of factor-2 bilinear upsampling along axis 0.

    Interior rows receive 0.75*(g[2i] + g[2i+1]) + 0.25*(g[2i+2] + g[2i-1]);
    edge clamping folds the out-of-range quarter weights back onto the ends.
    """
    ge = g[0::2]
    go = g[1::2]
    dx = 0.75 * (ge + go)
    dx[:-1] += 0.25 * ge[1:]
    dx[1:] += 0.25 * go[:-1]
    dx[0] += 0.25 * ge[0]
    dx[-1] += 0.25 * go[-1]
    return dx


def _bw_upsample2x(node, args, out, g):
    dx = _upsample2x_adjoint_rows(g.astype(np.float32))
    dx = np.swapaxes(_upsample2x_adjoint_rows(np.swapaxes(dx, 0, 1)), 0, 1)
    return (np.ascontiguousarray(dx),)


def _fw_downsample_box(node, args, bound):
    x = args[0]
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"downsample_box needs even extents, got {x.shape}")
    return x.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def _bw_downsample_box(node, args, out, g):
    x = args[0]
    h, w, c = x.shape
    dx = np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) * np.float32(0.25)
    return (dx,)


def _equirect_uv(dirs, rotation):
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    y = np.clip(y, -1.0 + 1e-7, 1.0 - 1e-7)
    u = np.arctan2(x, -z) / (2 * np.pi) + 0.5 + rotation / (2 * np.pi)
    v = np.arccos(y) / np.pi
    return u.astype(np.float32), v.astype(np.float32)


def _equirect_fetch(level, u, v):
    """Catmull-Rom fetch with repeat in u, clamp in v.

    Returns the value and its du/dv slopes; C1 in (u, v) so direction
    gradients stay finite-difference-consistent.
    """
    h, w = level.shape[0], level.shape[1]
    x = u * w - 0.5
    yy = v * h - 0.5
    x1 = np.floor(x).astype(np.int64)
    y1 = np.floor(yy).astype(np.int64)
    wx, dwx = _cubic_weights((x - x1).astype(np.float32))
    wy, dwy = _cubic_weights((yy - y1).astype(np.float32))
    val = np.zeros((u.shape[0], level.shape[2]), dtype=np.float32)
    ddu = np.zeros_like(val)
    ddv = np.zeros_like(val)
    for i in range(4):
        yi = np.clip(y1 + i - 1, 0, h - 1)
        row = np.zeros_like(val)
        drow = np.zeros_like(val)
        for j in range(4):
            xj = (x1 + j - 1) % w
            t = level[yi, xj]
            row += wx[j][:, None] * t
            drow += dwx[j][:, None] * t
        val += wy[i][:, None] * row
        ddu += wy[i][:, None] * drow
        ddv += dwy[i][:, None] * row
    return val, ddu * w, ddv * h


def _fw_envmap(node, args, bound):
    dirs = args[0]
    levels = node.params["levels"]
    u, v = _equirect_uv(dirs, node.params["rotation"])
    if len(args) == 1:
        val, _, _ = _equirect_fetch(levels[0], u, v)
        return val
    lod = np.clip(args[1][:, 0], 0.0, len(levels) - 1)
    k0 = np.floor(lod).astype(np.int64)
    k1 = np.minimum(k0 + 1, len(levels) - 1)
    # C1 smoothstep blend between adjacent mips: keeps the lod derivative
    # continuous across integer levels
    t = (lod - k0)[:, None].astype(np.float32)
    f = t * t * (3.0 - 2.0 * t)
    v0 = np.empty((dirs.shape[0], levels[0].shape[2]), dtype=np.float32)
    v1 = np.empty_like(v0)
    for k in np.unique(k0):
        m = k0 == k
        v0[m], _, _ = _equirect_fetch(levels[k], u[m], v[m])
    for k in np.unique(k1):
        m = k1 == k
        v1[m], _, _ = _equirect_fetch(levels[k], u[m], v[m])
    return v0 * (1 - f) + v1 * f


def _bw_envmap(node, args, out, g):
    dirs = args[0]
    levels = node.params["levels"]
    rotation = node.params["rotation"]
    u, v = _equirect_uv(dirs, rotation)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    yc = np.clip(y, -1.0 + 1e-6, 1.0 - 1e-6)
    denom = np.maximum(x * x + z * z, 1e-12)
    du_dx = (-z / denom) / (2 * np.pi)
    du_dz = (x / denom) / (2 * np.pi)
    dv_dy = (-1.0 / (np.pi * np.sqrt(1.0 - yc * yc)))

    if len(args) == 1:
        _, ddu, ddv = _equirect_fetch(levels[0], u, v)
        gu = np.sum(g * ddu, axis=1)
        gv = np.sum(g * ddv, axis=1)
        ddirs = np.stack([gu * du_dx, gv * dv_dy, gu * du_dz], axis=1)
        return (ddirs.astype(np.float32),)

    lod = np.clip(args[1][:, 0], 0.0, len(levels) - 1)
    k0 = np.floor(lod).astype(np.int64)
    k1 = np.minimum(k0 + 1, len(levels) - 1)
    t = (lod - k0)[:, None].astype(np.float32)
    f = t * t * (3.0 - 2.0 * t)
    dfdt = 6.0 * t * (1.0 - t)
    v0 = np.empty_like(out)
    v1 = np.empty_like(out)
    ddu = np.zeros_like(out)
    ddv = np.zeros_like(out)
    for k in np.unique(k0):
        m = k0 == k
        v0[m], du0, dv0 = _equirect_fetch(levels[k], u[m], v[m])
        ddu[m] += du0 * (1 - f[m])
        ddv[m] += dv0 * (1 - f[m])
    for k in np.unique(k1):
        m = k1 == k
        v1[m], du1, dv1 = _equirect_fetch(levels[k], u[m], v[m])
        ddu[m] += du1 * f[m]
        ddv[m] += dv1 * f[m]
    gu = np.sum(g * ddu, axis=1)
    gv = np.sum(g * ddv, axis=1)
    ddirs = np.stack([gu * du_dx, gv * dv_dy, gu * du_dz], axis=1).astype(np.float32)
    dlod = (np.sum(g * (v1 - v0), axis=1, keepdims=True) * dfdt).astype(np.float32)
    # clamp endpoints: no lod gradient past the chain ends
    at_edge = ((lod <= 0.0) | (lod >= len(levels) - 1))[:, None]
    dlod = np.where(at_edge, 0.0, dlod).astype(np.float32)
    return ddirs, dlod


def _fw_compose(node, args, bound):
    rows = args[0]
    bg = node.params["background"]
    idx = node.params["idx"]
    h, w, c = bg.shape
    if rows.shape != (idx.shape[0], c):
        raise ValueError(f"rows {rows.shape} do not match {idx.shape[0]} indices x {c} channels")
    out = bg.reshape(h * w, c).copy()
    out[idx] = rows
    return out.reshape(h, w, c)


def _bw_compose(node, args, out, g):
    idx = node.params["idx"]
    c = g.shape[2]
    return (g.reshape(-1, c)[idx],)


_FORWARD = {
    "input": _fw_input,
    "const": _fw_const,
    "add": lambda n, a, b: a[0] + a[1],
    "sub": lambda n, a, b: a[0] - a[1],
    "mul": lambda n, a, b: a[0] * a[1],
    "scale": lambda n, a, b: a[0] * np.float32(n.params["s"]),
    "clamp": lambda n, a, b: np.clip(a[0], n.params["lo"], n.params["hi"]),
    "sigmoid": lambda n, a, b: 1.0 / (1.0 + np.exp(-a[0])),
    "tanh": lambda n, a, b: np.tanh(a[0]),
    "pow": lambda n, a, b: np.power(a[0], np.float32(n.params["p"])),
    "mix": lambda n, a, b: a[0] + a[2] * (a[1] - a[0]),
    "normalize3": lambda n, a, b: a[0] / np.linalg.norm(a[0], axis=-1, keepdims=True),
    "dot3": lambda n, a, b: np.sum(a[0] * a[1], axis=-1, keepdims=True),
    "concat": lambda n, a, b: np.concatenate(a, axis=n.params["axis"]),
    "slice_c": lambda n, a, b: np.ascontiguousarray(a[0][..., n.params["lo"]:n.params["hi"]]),
    "reduce_mean": lambda n, a, b: np.asarray([a[0].mean()], dtype=np.float32),
    "bilinear_sample": _fw_bilinear,
    "bicubic_sample": _fw_bicubic,
    "conv2d": _fw_conv2d,
    "upsample2x": _fw_upsample2x,
    "downsample_box": _fw_downsample_box,
    "envmap_sample": _fw_envmap,
    "compose_image": _fw_compose,
}


def _bw_add(node, args, out, g):
    return _unbroadcast(g, args[0].shape), _unbroadcast(g, args[1].shape)


def _bw_sub(node, args, out, g):
    return _unbroadcast(g, args[0].shape), _unbroadcast(-g, args[1].shape)


def _bw_mul(node, args, out, g):
    return (_unbroadcast(g * args[1], args[0].shape),
            _unbroadcast(g * args[0], args[1].shape))


def _bw_clamp(node, args, out, g):
    x = args[0]
    inside = (x >= node.params["lo"]) & (x <= node.params["hi"])
    return (g * inside,)


def _bw_mix(node, args, out, g):
    a, b, t = args
    return (_unbroadcast(g * (1.0 - t), a.shape),
            _unbroadcast(g * t, b.shape),
            _unbroadcast(g * (b - a), t.shape))


def _bw_normalize3(node, args, out, g):
    x = args[0]
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    n = x / norm
    return ((g - n * np.sum(g * n, axis=-1, keepdims=True)) / norm,)


def _bw_concat(node, args, out, g):
    axis = node.params["axis"]
    sizes = [a.shape[axis] for a in args]
    splits = np.cumsum(sizes)[:-1]
    return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))


def _bw_slice_c(node, args, out, g):
    x = args[0]
    dx = np.zeros_like(x)
    dx[..., node.params["lo"]:node.params["hi"]] = g
    return (dx,)


_BACKWARD = {
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "scale": lambda n, a, o, g: (g * np.float32(n.params["s"]),),
    "clamp": _bw_clamp,
    "sigmoid": lambda n, a, o, g: (g * o * (1.0 - o),),
    "tanh": lambda n, a, o, g: (g * (1.0 - o * o),),
    "pow": lambda n, a, o, g: (g * np.float32(n.params["p"]) *
                               np.power(a[0], np.float32(n.params["p"] - 1.0)),),
    "mix": _bw_mix,
    "normalize3": _bw_normalize3,
    "dot3": lambda n, a, o, g: (g * a[1], g * a[0]),
    "concat": _bw_concat,
    "slice_c": _bw_slice_c,
    "reduce_mean": lambda n, a, o, g: (np.full_like(a[0], g.reshape(())[()] / a[0].size),),
    "bilinear_sample": _bw_bilinear,
    "bicubic_sample": _bw_bicubic,
    "conv2d": _bw_conv2d,
    "upsample2x": _bw_upsample2x,
    "downsample_box": _bw_downsample_box,
    "envmap_sample": _bw_envmap,
    "compose_image": _bw_compose,
}
