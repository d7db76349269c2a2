"""Noise schedules and epsilon-prediction models.

The closed-form models here are analysis instruments: a distribution
concentrated at one image has the exact denoiser

    eps(x_t) = (x_t - sqrt(abar_t) * target) / sqrt(1 - abar_t)

which makes the one-step clean-image estimate recover the target for any
noise draw. All schedule algebra runs in float64 internally: the
1/sqrt(abar) amplification near t=1 would otherwise eat the tight
identity tolerances in float32.
"""

import numpy as np

from .errors import ScorerError
from .imageops import binomial_blur5, upsample_node_aligned

ALPHA_BAR_FLOOR = 1e-4


class CosineSchedule:
    """Continuous abar(t) = cos^2(pi t / 2), floored away from zero."""

    def alpha_bar(self, t: float) -> float:
        if not (0.0 <= t <= 1.0):
            raise ScorerError(f"t={t} outside [0, 1]")
        return max(float(np.cos(np.pi * t / 2.0) ** 2), ALPHA_BAR_FLOOR)

    def table(self, steps: int) -> np.ndarray:
        """Discretized schedule (step 0 = clean end), non-increasing."""
        ts = np.linspace(0.0, 1.0, steps)
        return np.maximum(np.cos(np.pi * ts / 2.0) ** 2, ALPHA_BAR_FLOOR).astype(np.float32)


class TabulatedSchedule:
    """Server-supplied discrete schedule; continuous t maps to the nearest step."""

    def __init__(self, table):
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 1 or len(table) < 2:
            raise ScorerError("schedule table must be a 1D array of at least 2 values")
        if np.any(np.diff(table) > 1e-9):
            raise ScorerError("schedule table must be non-increasing")
        if not (0 < table.min() and table.max() <= 1.0):
            raise ScorerError("schedule values must lie in (0, 1]")
        self.values = table

    def step_for(self, t: float) -> int:
        if not (0.0 <= t <= 1.0):
            raise ScorerError(f"t={t} outside [0, 1]")
        return int(round(t * (len(self.values) - 1)))

    def alpha_bar(self, t: float) -> float:
        return float(self.values[self.step_for(t)])


def noise_image(x0, alpha_bar, eps):
    """Forward diffusion x_t = sqrt(abar) x0 + sqrt(1-abar) eps."""
    a = np.float64(alpha_bar)
    return np.sqrt(a) * np.asarray(x0, np.float64) + np.sqrt(1.0 - a) * np.asarray(eps, np.float64)


def predict_x0(x_t, t, eps_hat, schedule):
    """One-step clean-image estimate from the noise prediction."""
    a = np.float64(schedule.alpha_bar(t))
    return (np.asarray(x_t, np.float64) - np.sqrt(1.0 - a) * np.asarray(eps_hat, np.float64)) / np.sqrt(a)


def cfg_combine(eps_cond, eps_uncond, s):
    """Classifier-free guidance: uncond + s * (cond - uncond)."""
    eps_cond = np.asarray(eps_cond, np.float64)
    eps_uncond = np.asarray(eps_uncond, np.float64)
    if eps_cond.shape != eps_uncond.shape:
        raise ScorerError(f"cfg shapes differ: {eps_cond.shape} vs {eps_uncond.shape}")
    return eps_uncond + s * (eps_cond - eps_uncond)


def degenerate_eps(x_t, alpha_bar, target):
    a = np.float64(alpha_bar)
    return (np.asarray(x_t, np.float64) - np.sqrt(a) * np.asarray(target, np.float64)) / np.sqrt(1.0 - a)


class DegenerateModel:
    """Optimal denoiser of a distribution concentrated at a single image."""

    def __init__(self, target, schedule=None):
        self.target = np.asarray(target, dtype=np.float64)
        self.schedule = schedule or CosineSchedule()

    def eps(self, x_t, t, key=None, cond=None, guidance=1.0, seed=0):
        x_t = np.asarray(x_t, np.float64)
        if x_t.shape != self.target.shape:
            raise ScorerError(f"x_t shape {x_t.shape} does not match target {self.target.shape}")
        return degenerate_eps(x_t, self.schedule.alpha_bar(t), self.target)


class KeyedDegenerateModel:
    """Per-view targets: the key selects which image the model concentrates on."""

    def __init__(self, targets: dict, schedule=None):
        self.targets = {k: np.asarray(v, np.float64) for k, v in targets.items()}
        self.schedule = schedule or CosineSchedule()

    def eps(self, x_t, t, key=None, cond=None, guidance=1.0, seed=0):
        if key not in self.targets:
            raise ScorerError(f"no target registered for view key {key!r}")
        return degenerate_eps(np.asarray(x_t, np.float64),
                              self.schedule.alpha_bar(t), self.targets[key])


class ToySuperResModel:
    """Super-resolution stand-in: degenerate around a sharpened upsample.

    target(cond) = clamp01( U(cond) + gain * (U(cond) - blur5(U(cond))) )
    with U the node-aligned bilinear 4x upsample (lattice values land on
    fine pixels exactly, so center point-sampling inverts it). gain > 0
    adds an unsharp-mask overshoot; under self-conditioning the
    subsample reads the overshoot back and the sharpening compounds,
    which is the refinement drift this model exists to exhibit.
    """

    factor = 4

    def __init__(self, gain=1.0, schedule=None):
        self.gain = float(gain)
        self.schedule = schedule or CosineSchedule()

    def target_for(self, cond) -> np.ndarray:
        up = upsample_node_aligned(np.asarray(cond, np.float64), self.factor)
        sharp = up + self.gain * (up - binomial_blur5(up))
        return np.clip(sharp, 0.0, 1.0)

    def eps(self, x_t, t, key=None, cond=None, guidance=1.0, seed=0):
        if cond is None:
            raise ScorerError("super-resolution model needs a conditioning image")
        x_t = np.asarray(x_t, np.float64)
        cond = np.asarray(cond, np.float64)
        if x_t.shape[0] != self.factor * cond.shape[0] or x_t.shape[1] != self.factor * cond.shape[1]:
            raise ScorerError(
                f"x_t {x_t.shape[:2]} must be {self.factor}x the condition {cond.shape[:2]}")
        return degenerate_eps(x_t, self.schedule.alpha_bar(t), self.target_for(cond))


# -- toy latent encoder ----------------------------------------------------

TOY_ENCODER_SEED = 7
TOY_ENCODER_KERNEL = 8
TOY_ENCODER_STRIDE = 4
TOY_ENCODER_PAD = 2
TOY_ENCODER_OUT = 4


def toy_encoder_weights() -> np.ndarray:
    rng = np.random.default_rng(TOY_ENCODER_SEED)
    k = TOY_ENCODER_KERNEL
    return rng.normal(size=(k, k, 3, TOY_ENCODER_OUT)).astype(np.float32)


def toy_encode(image: np.ndarray) -> np.ndarray:
    """Fixed linear strided convolution standing in for a latent encoder.

    Linear and heavily rank-deficient: the latent has 12x fewer values
    than the image, so near-optimal latent matches leave the pixel
    content essentially unconstrained along the null space.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ScorerError(f"toy_encode expects HxWx3, got {image.shape}")
    h, w = image.shape[:2]
    if h % TOY_ENCODER_STRIDE or w % TOY_ENCODER_STRIDE:
        raise ScorerError(f"image extents {h}x{w} not divisible by {TOY_ENCODER_STRIDE}")
    wgt = toy_encoder_weights().astype(np.float64)
    k, s, p = TOY_ENCODER_KERNEL, TOY_ENCODER_STRIDE, TOY_ENCODER_PAD
    padded = np.pad(image, ((p, p), (p, p), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))[::s, ::s]
    ho, wo = win.shape[0], win.shape[1]
    cols = win.transpose(0, 1, 3, 4, 2).reshape(ho * wo, k * k * 3)
    return (cols @ wgt.reshape(k * k * 3, TOY_ENCODER_OUT)).reshape(ho, wo, TOY_ENCODER_OUT)


def toy_encode_node(g, image_node: int) -> int:
    """Graph twin of toy_encode for backpropagation through the encoder."""
    w = g.const(toy_encoder_weights())
    return g.conv2d(image_node, w, stride=TOY_ENCODER_STRIDE, pad=TOY_ENCODER_PAD)


def toy_encoder_matrix(h: int, w: int) -> np.ndarray:
    """Dense unrolled matrix of toy_encode on an HxWx3 input (float64)."""
    wgt = toy_encoder_weights().astype(np.float64)
    k, s, p = TOY_ENCODER_KERNEL, TOY_ENCODER_STRIDE, TOY_ENCODER_PAD
    ho, wo = h // s, w // s
    mat = np.zeros((ho * wo * TOY_ENCODER_OUT, h * w * 3))
    for oy in range(ho):
        for ox in range(wo):
            for ky in range(k):
                iy = oy * s - p + ky
                if not (0 <= iy < h):
                    continue
                for kx in range(k):
                    ix = ox * s - p + kx
                    if not (0 <= ix < w):
                        continue
                    for ic in range(3):
                        col = (iy * w + ix) * 3 + ic
                        rows = (oy * wo + ox) * TOY_ENCODER_OUT + np.arange(TOY_ENCODER_OUT)
                        mat[rows, col] = wgt[ky, kx, ic]
    return mat
