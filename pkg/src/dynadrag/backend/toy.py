"""Deterministic stand-in backend with identity dynamics.

Latents are 8x-downsampled 4-channel images (RGB + luma), inversion and
denoising are identities, and features are the latent broadcast to
``feature_channels``. Every edit-loop pathway becomes exactly analyzable
without pretrained weights.
"""
from __future__ import annotations

import logging

import numpy as np
import torch

from dynadrag.backend.base import (
    BackendError,
    DiffusionBackend,
    FeatureMap,
    LatentOrigin,
    LatentState,
)

logger = logging.getLogger(__name__)


class ToyBackend(DiffusionBackend):
    kind = "toy"
    latent_channels = 4
    downscale = 8

    def __init__(self, feature_channels: int = 8, dtype: torch.dtype = torch.float32):
        if feature_channels % self.latent_channels:
            raise ValueError("feature_channels must be a multiple of latent_channels")
        self.feature_channels = feature_channels
        self.dtype = dtype
        self.active_adapter: str | None = None

    def encode_image(self, image: np.ndarray) -> torch.Tensor:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise BackendError(f"expected (H, W, 3) image, got {image.shape}")
        h, w, _ = image.shape
        if h % self.downscale or w % self.downscale:
            raise BackendError(f"image {w}x{h} not divisible by {self.downscale}")
        d = self.downscale
        blocks = image.reshape(h // d, d, w // d, d, 3).mean(axis=(1, 3))  # (h/d, w/d, 3)
        rgb = np.moveaxis(blocks, -1, 0)
        luma = rgb.mean(axis=0, keepdims=True)
        z = np.concatenate([rgb, luma], axis=0)
        return torch.as_tensor(z, dtype=self.dtype)

    def decode_latent(self, z: torch.Tensor) -> np.ndarray:
        if z.shape[0] != self.latent_channels:
            raise BackendError(f"expected {self.latent_channels}-channel latent")
        rgb = z[:3].detach().to(torch.float64)
        up = rgb.repeat_interleave(self.downscale, dim=1).repeat_interleave(self.downscale, dim=2)
        img = np.moveaxis(up.numpy(), 0, -1)
        return np.clip(img, 0.0, 1.0).astype(np.float32)

    def finetune_identity_lora(self, image: np.ndarray, rank: int = 16, steps: int = 200,
                               learning_rate: float = 2e-4, seed: int = 0) -> str:
        logger.info("toy backend: identity adapter, fine-tuning is a no-op")
        self.active_adapter = "toy-identity"
        return self.active_adapter

    def ddim_invert(self, z_0: torch.Tensor, steps: int) -> list[LatentState]:
        if not torch.isfinite(z_0).all():
            raise BackendError("non-finite latent at inversion step 0")
        return [LatentState(z_0.clone(), t, LatentOrigin.INVERTED) for t in range(1, steps + 1)]

    def denoise_step(self, state: LatentState, kv_source: LatentState | None = None) -> LatentState:
        if state.t < 1:
            raise BackendError("cannot denoise below t=0")
        self._check_kv_timesteps(state, kv_source)
        # Identity dynamics: the latent passes through (keeps autodiff graph).
        return LatentState(state.z_t, state.t - 1, state.origin)

    def extract_features(self, state: LatentState) -> FeatureMap:
        reps = self.feature_channels // self.latent_channels
        return FeatureMap(state.z_t.repeat(reps, 1, 1))
