"""Deterministic DDIM schedule math for an eps-prediction denoiser.

Schedule indices run 0..N where 0 is the clean latent and N the noisiest
inversion state; each index maps to a training timestep of the underlying
model. All steps are eta=0 (deterministic).
"""
from __future__ import annotations

from typing import Callable

import torch

EpsModel = Callable[[torch.Tensor, int], torch.Tensor]


class DdimSchedule:
    def __init__(self, num_inference_steps: int, num_train_timesteps: int = 1000,
                 beta_start: float = 0.00085, beta_end: float = 0.012,
                 beta_schedule: str = "scaled_linear"):
        if num_inference_steps < 1 or num_inference_steps > num_train_timesteps:
            raise ValueError("num_inference_steps must be in [1, num_train_timesteps]")
        if beta_schedule == "scaled_linear":
            betas = torch.linspace(beta_start ** 0.5, beta_end ** 0.5,
                                   num_train_timesteps, dtype=torch.float64) ** 2
        elif beta_schedule == "linear":
            betas = torch.linspace(beta_start, beta_end, num_train_timesteps,
                                   dtype=torch.float64)
        else:
            raise ValueError(f"unknown beta schedule {beta_schedule!r}")
        self.num_inference_steps = num_inference_steps
        self.alphas_cumprod = torch.cumprod(1.0 - betas, dim=0)
        stride = num_train_timesteps // num_inference_steps
        # index i in 1..N -> training timestep; index 0 is the clean latent.
        self.train_timesteps = [i * stride - 1 for i in range(1, num_inference_steps + 1)]

    def timestep(self, index: int) -> int:
        if not 1 <= index <= self.num_inference_steps:
            raise ValueError(f"schedule index {index} out of range")
        return self.train_timesteps[index - 1]

    def alpha_bar(self, index: int) -> float:
        """Cumulative alpha at a schedule index; exactly 1 at the clean index."""
        if index == 0:
            return 1.0
        return float(self.alphas_cumprod[self.timestep(index)])

    def _predict_x0(self, z: torch.Tensor, eps: torch.Tensor, a: float) -> torch.Tensor:
        return (z - (1.0 - a) ** 0.5 * eps) / a ** 0.5

    def denoise_from_eps(self, z: torch.Tensor, eps: torch.Tensor, index: int) -> torch.Tensor:
        """One DDIM step index -> index-1 given the model's eps at ``index``."""
        a, a_prev = self.alpha_bar(index), self.alpha_bar(index - 1)
        x0 = self._predict_x0(z, eps, a)
        return a_prev ** 0.5 * x0 + (1.0 - a_prev) ** 0.5 * eps

    def invert_from_eps(self, z: torch.Tensor, eps: torch.Tensor, index: int) -> torch.Tensor:
        """One inversion step index-1 -> index given eps evaluated on ``z``."""
        a_prev, a = self.alpha_bar(index - 1), self.alpha_bar(index)
        x0 = self._predict_x0(z, eps, a_prev)
        return a ** 0.5 * x0 + (1.0 - a) ** 0.5 * eps

    def denoise_step(self, model: EpsModel, z: torch.Tensor, index: int) -> torch.Tensor:
        return self.denoise_from_eps(z, model(z, self.timestep(index)), index)

    def invert_step(self, model: EpsModel, z: torch.Tensor, index: int) -> torch.Tensor:
        # eps is evaluated on the current (less noisy) latent at the target timestep.
        return self.invert_from_eps(z, model(z, self.timestep(index)), index)

    def add_noise(self, z0: torch.Tensor, noise: torch.Tensor, train_timestep: int) -> torch.Tensor:
        a = self.alphas_cumprod[train_timestep].to(z0.dtype)
        return a ** 0.5 * z0 + (1.0 - a) ** 0.5 * noise
