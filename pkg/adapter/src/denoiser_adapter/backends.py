"""Denoise backends.

A backend receives the noisy frame stack for one timestep and returns
predicted clean frames of the same shape.  ``EchoBackend`` is the
conformance reference: byte-identical passthrough.  ``DiffusionBackend``
wraps a latent text-to-image model loaded through ``diffusers``; both
torch and diffusers are imported lazily so the echo path works on a bare
install.
"""

from __future__ import annotations

import numpy as np

from .session import BridgeSession


class BackendUnavailable(Exception):
    """The requested backend cannot run in this environment."""


class EchoBackend:
    name = "echo"

    def denoise(self, session: BridgeSession, t_index: int, t_value: int,
                frames: np.ndarray) -> np.ndarray:
        return frames


class DiffusionBackend:
    """x0 prediction through a latent diffusion UNet.

    Frames arrive as (n, h, w, c) float32 in [0, 1].  Each is VAE-encoded,
    the UNet predicts the noise at the engine's training timestep, the
    noise is converted to an x0 estimate with the scheduler's signal rates
    and decoded back to pixels.  ``model="random-tiny"`` builds a small
    randomly initialised UNet/VAE pair, enough to exercise the full path
    without downloading weights.
    """

    name = "diffusion"

    def __init__(self, model: str = "random-tiny", device: str = "cpu"):
        try:
            import torch  # noqa: F401
            import diffusers  # noqa: F401
        except ImportError as exc:
            raise BackendUnavailable(
                f"diffusion backend needs torch and diffusers: {exc}") from exc
        self._device = device
        self._load(model)

    def _load(self, model: str) -> None:
        import torch
        from diffusers import AutoencoderKL, UNet2DConditionModel
        from transformers import CLIPTextModel, CLIPTokenizer

        if model == "random-tiny":
            torch.manual_seed(0)
            self._vae = AutoencoderKL(
                in_channels=3, out_channels=3,
                down_block_types=("DownEncoderBlock2D",),
                up_block_types=("UpDecoderBlock2D",),
                block_out_channels=(32,), latent_channels=4, norm_num_groups=8)
            self._unet = UNet2DConditionModel(
                sample_size=16, in_channels=4, out_channels=4,
                layers_per_block=1,
                block_out_channels=(32, 64),
                down_block_types=("DownBlock2D", "CrossAttnDownBlock2D"),
                up_block_types=("CrossAttnUpBlock2D", "UpBlock2D"),
                cross_attention_dim=32, norm_num_groups=8)
            self._tokenizer = None
            self._text_encoder = None
            self._embed_dim = 32
        else:
            from diffusers import StableDiffusionPipeline
            pipe = StableDiffusionPipeline.from_pretrained(model)
            self._vae = pipe.vae
            self._unet = pipe.unet
            self._tokenizer = pipe.tokenizer
            self._text_encoder = pipe.text_encoder
            self._embed_dim = self._unet.config.cross_attention_dim
        self._vae.to(self._device).eval()
        self._unet.to(self._device).eval()
        if self._text_encoder is not None:
            self._text_encoder.to(self._device).eval()
        betas = torch.linspace(8.5e-4, 1.2e-2, 1000, dtype=torch.float64)
        self._alpha_bars = torch.cumprod(1.0 - betas, dim=0).float()
        self._scale = 2 ** (len(self._vae.config.block_out_channels) - 1)

    def _embed_prompt(self, prompt: str, batch: int):
        import torch
        if self._text_encoder is None:
            gen = torch.Generator().manual_seed(len(prompt))
            states = torch.randn(1, 8, self._embed_dim, generator=gen)
            return states.repeat(batch, 1, 1).to(self._device)
        tokens = self._tokenizer(
            [prompt] * batch, padding="max_length", truncation=True,
            max_length=self._tokenizer.model_max_length, return_tensors="pt")
        with torch.no_grad():
            return self._text_encoder(tokens.input_ids.to(self._device))[0]

    def denoise(self, session: BridgeSession, t_index: int, t_value: int,
                frames: np.ndarray) -> np.ndarray:
        import torch

        n, h, w, c = frames.shape
        if c != 3:
            raise ValueError(f"diffusion backend expects 3 channels, got {c}")
        if h % self._scale or w % self._scale:
            raise ValueError(
                f"frame size {h}x{w} not divisible by VAE factor {self._scale}")
        key = "embeddings"
        if key not in session.backend_state:
            session.backend_state[key] = self._embed_prompt(
                session.conditioning.prompt, n)
        embeddings = session.backend_state[key]

        t = min(max(int(t_value), 0), len(self._alpha_bars) - 1)
        a_bar = self._alpha_bars[t]
        with torch.no_grad():
            x = torch.from_numpy(np.transpose(frames, (0, 3, 1, 2))).to(self._device)
            x = x * 2.0 - 1.0
            z = self._vae.encode(x).latent_dist.mode()
            eps = self._unet(z, t, encoder_hidden_states=embeddings).sample
            z0 = (z - torch.sqrt(1.0 - a_bar) * eps) / torch.sqrt(a_bar)
            out = self._vae.decode(z0).sample
            out = ((out + 1.0) / 2.0).clamp(0.0, 1.0)
        result = np.transpose(out.cpu().numpy(), (0, 2, 3, 1))
        return np.ascontiguousarray(result, dtype=np.float32)


def make_backend(mode: str, model: str, device: str):
    if mode == "echo":
        return EchoBackend()
    if mode == "diffusion":
        return DiffusionBackend(model=model, device=device)
    raise ValueError(f"unknown backend mode {mode!r}")
