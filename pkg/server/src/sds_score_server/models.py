"""Model backends: test doubles and the real cascaded diffusion stages.

A backend answers eps(x_t, step, prompt, cond, guidance, seed) and
advertises its cumulative noise-retention table. Tensors cross the wire
in the model's native value range ([-1, 1] for the pixel-space cascades;
the closed-form doubles use whatever range their target was given in).
"""

import numpy as np


def cosine_alpha_table(steps: int = 1000) -> np.ndarray:
    ts = np.linspace(0.0, 1.0, steps)
    return np.maximum(np.cos(np.pi * ts / 2.0) ** 2, 1e-4).astype(np.float32)


class ZerosModel:
    """Returns zero noise estimates; pure protocol instrument."""

    name = "mock-zeros"
    max_h = max_w = 1024

    def __init__(self, steps: int = 1000):
        self.alphas = cosine_alpha_table(steps)

    def eps(self, x_t, step, prompt, cond, guidance, seed):
        return np.zeros_like(x_t, dtype=np.float32)


class DegenerateModel:
    """Closed-form denoiser of a single-image distribution.

    eps = (x_t - sqrt(abar) * target) / sqrt(1 - abar); computed in
    float64 so the client-side clean-image reconstruction stays exact.
    """

    name = "mock-degenerate"
    max_h = max_w = 1024

    def __init__(self, target, steps: int = 1000):
        self.target = np.asarray(target, dtype=np.float64)
        self.alphas = cosine_alpha_table(steps)

    def eps(self, x_t, step, prompt, cond, guidance, seed):
        x_t = np.asarray(x_t, np.float64)
        if x_t.shape != self.target.shape:
            raise ValueError(f"x_t shape {x_t.shape} does not match the configured "
                             f"target {self.target.shape}")
        idx = int(round(step))
        if not (0 <= idx < len(self.alphas)):
            raise ValueError(f"step {idx} outside schedule of {len(self.alphas)}")
        a = float(self.alphas[idx])
        return ((x_t - np.sqrt(a) * self.target) / np.sqrt(1.0 - a)).astype(np.float32)


def load_target_image(path) -> np.ndarray:
    """Load a degenerate-mode target: EXR (values as stored) or PNG (/255)."""
    if str(path).endswith(".exr"):
        raise ValueError("EXR targets are not supported server-side; use PNG")
    from PIL import Image
    img = np.asarray(Image.open(path).convert("RGB"), np.float32) / 255.0
    return img


class CascadedDiffusionModel:
    """Pretrained pixel-space diffusion stage served over the wire.

    Wraps a huggingface diffusers UNet (DeepFloyd-IF style): stage 1 is
    text-to-image at 64x64, stage 2 super-resolution at 256x256 with the
    low-resolution conditioning image concatenated per the model's native
    pathway. Classifier-free guidance runs here, in one batched forward.
    Tensors arrive channel-last in [-1, 1] and leave the same way; the
    predicted variance channels are discarded.
    """

    def __init__(self, model_id: str, device: str = "cuda", dtype: str = "float16"):
        try:
            import torch
            from diffusers import DiffusionPipeline
        except ImportError as exc:
            raise RuntimeError(
                "serving a real model needs the [model] extra "
                "(torch, diffusers, transformers)") from exc
        self._torch = torch
        torch_dtype = getattr(torch, dtype)
        self.pipe = DiffusionPipeline.from_pretrained(
            model_id, torch_dtype=torch_dtype, variant="fp16" if dtype == "float16" else None)
        self.pipe.to(device)
        self.device = device
        self.name = model_id
        self.is_sr = "II" in model_id or getattr(self.pipe.unet.config, "in_channels", 3) > 3
        sched = self.pipe.scheduler
        self.alphas = sched.alphas_cumprod.cpu().numpy().astype(np.float32)[::-1].copy()
        # wire convention: step 0 = clean end; diffusers tables run the other way
        self._n_steps = len(self.alphas)
        sample_size = getattr(self.pipe.unet.config, "sample_size", 64)
        self.max_h = self.max_w = int(sample_size)
        self._embed_cache = {}

    def _embeds(self, prompt: str):
        if prompt not in self._embed_cache:
            cond, uncond = self.pipe.encode_prompt(prompt)
            self._embed_cache[prompt] = (cond, uncond)
        return self._embed_cache[prompt]

    def eps(self, x_t, step, prompt, cond, guidance, seed):
        torch = self._torch
        idx = int(round(step))
        if not (0 <= idx < self._n_steps):
            raise ValueError(f"step {idx} outside schedule of {self._n_steps}")
        timestep = self._n_steps - 1 - idx  # undo the wire-order flip

        x = torch.from_numpy(np.ascontiguousarray(x_t.transpose(2, 0, 1))[None])
        x = x.to(self.device, self.pipe.unet.dtype)
        cond_embed, uncond_embed = self._embeds(prompt)

        model_in = x
        if self.is_sr:
            if cond is None:
                raise ValueError("super-resolution stage needs a conditioning image")
            low = torch.from_numpy(np.ascontiguousarray(cond.transpose(2, 0, 1))[None])
            low = low.to(self.device, self.pipe.unet.dtype)
            up = torch.nn.functional.interpolate(low, size=x.shape[-2:], mode="bilinear")
            model_in = torch.cat([x, up], dim=1)

        batch = torch.cat([model_in, model_in], dim=0)
        embeds = torch.cat([uncond_embed, cond_embed], dim=0)
        t = torch.tensor([timestep, timestep], device=self.device)
        with torch.no_grad():
            torch.manual_seed(int(seed) & 0x7FFFFFFF)
            out = self.pipe.unet(batch, t, encoder_hidden_states=embeds).sample
        out = out[:, :x.shape[1]]  # drop predicted-variance channels
        eps_uncond, eps_cond = out.chunk(2)
        eps = eps_uncond + guidance * (eps_cond - eps_uncond)
        return eps[0].float().cpu().numpy().transpose(1, 2, 0)
