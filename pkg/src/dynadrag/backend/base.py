"""Backend contract shared by the toy and latent-diffusion implementations."""
from __future__ import annotations

import abc
import enum
import logging
from dataclasses import dataclass

import numpy as np
import torch

logger = logging.getLogger(__name__)


class BackendError(RuntimeError):
    pass


class LatentOrigin(str, enum.Enum):
    INVERTED = "inverted"
    OPTIMIZED = "optimized"


@dataclass
class LatentState:
    """Latent raster at a schedule position ``t`` (t=0 is the clean latent)."""

    z_t: torch.Tensor  # (C_lat, H_lat, W_lat)
    t: int
    origin: LatentOrigin = LatentOrigin.INVERTED

    def __post_init__(self):
        if self.z_t.ndim != 3:
            raise ValueError(f"latent must be (C, H, W), got {tuple(self.z_t.shape)}")
        if self.t < 0:
            raise ValueError("timestep index must be >= 0")

    def detached(self) -> "LatentState":
        return LatentState(self.z_t.detach().clone(), self.t, self.origin)


@dataclass
class FeatureMap:
    """Denoiser feature raster at latent resolution, (C_feat, H_lat, W_lat)."""

    data: torch.Tensor

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"feature map must be (C, H, W), got {tuple(self.data.shape)}")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def sample_feature(fm: FeatureMap, x: float, y: float) -> torch.Tensor:
    """Differentiable bilinear read of a feature vector at fractional latent
    coordinates. Out-of-bounds positions are clamped (with a warning)."""
    h, w = fm.height, fm.width
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        logger.warning("feature sample at (%.2f, %.2f) outside %dx%d; clamping", x, y, w, h)
        x = min(max(x, 0.0), w - 1.0)
        y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    wx = x - x0
    wy = y - y0
    data = fm.data
    top = data[:, y0, x0] * (1 - wx) + data[:, y0, x1] * wx
    bot = data[:, y1, x0] * (1 - wx) + data[:, y1, x1] * wx
    return top * (1 - wy) + bot * wy


def gather_patch(fm: FeatureMap, cx: float, cy: float, r: int) -> torch.Tensor:
    """Stack the (2r+1)^2 feature vectors around a fractional center into a
    (C, 2r+1, 2r+1) tensor, each sampled bilinearly (differentiable)."""
    cols = []
    for dy in range(-r, r + 1):
        row = [sample_feature(fm, cx + dx, cy + dy) for dx in range(-r, r + 1)]
        cols.append(torch.stack(row, dim=-1))
    return torch.stack(cols, dim=-2)


class DiffusionBackend(abc.ABC):
    """Latent encode/decode, inversion, denoising, feature extraction, and
    identity-adapter fine-tuning behind one interface.

    Implementations are read-only after load except during LoRA fine-tuning.
    """

    kind: str
    latent_channels: int
    feature_channels: int
    downscale: int = 8

    @abc.abstractmethod
    def encode_image(self, image: np.ndarray) -> torch.Tensor:
        """(H, W, 3) float image in [0, 1] -> clean latent (C_lat, H/8, W/8)."""

    @abc.abstractmethod
    def decode_latent(self, z: torch.Tensor) -> np.ndarray:
        """Clean latent -> (H, W, 3) float image in [0, 1]."""

    @abc.abstractmethod
    def finetune_identity_lora(self, image: np.ndarray, rank: int = 16, steps: int = 200,
                               learning_rate: float = 2e-4, seed: int = 0) -> str:
        """Fit a low-rank adapter reconstructing ``image``; returns adapter id."""

    @abc.abstractmethod
    def ddim_invert(self, z_0: torch.Tensor, steps: int) -> list[LatentState]:
        """Deterministic inversion trajectory; returns states for t = 1..steps."""

    @abc.abstractmethod
    def denoise_step(self, state: LatentState, kv_source: "LatentState | None" = None) -> LatentState:
        """One step t -> t-1. With ``kv_source``, self-attention keys/values
        come from a parallel pass of the source state at the same timestep."""

    @abc.abstractmethod
    def extract_features(self, state: LatentState) -> FeatureMap:
        """Last denoiser-block output, upsampled to latent resolution.
        Differentiable with respect to ``state.z_t``."""

    def denoise_to_clean(self, state: LatentState,
                         kv_sources: "dict[int, LatentState] | None" = None) -> LatentState:
        """Denoise down to t=0, optionally KV-guided by per-timestep sources."""
        cur = state
        while cur.t > 0:
            src = kv_sources.get(cur.t) if kv_sources else None
            cur = self.denoise_step(cur, kv_source=src)
        return cur

    def _check_kv_timesteps(self, state: LatentState, kv_source: "LatentState | None") -> None:
        if kv_source is not None and kv_source.t != state.t:
            raise BackendError(
                f"kv_source timestep {kv_source.t} != state timestep {state.t}")
