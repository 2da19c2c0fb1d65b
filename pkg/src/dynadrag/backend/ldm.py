"""Latent-diffusion backend over a pretrained Stable Diffusion 1.5 model.

Requires the ``dynadrag[ldm]`` extra (diffusers + transformers) and local or
hub-resolvable weights; set ``backend.model_id`` or ``DYNADRAG_SD_MODEL``.
Conditioning is an empty prompt throughout and sampling is unguided.
"""
from __future__ import annotations

import logging
import os

import numpy as np
import torch
from torch import nn

from dynadrag.backend.base import (
    BackendError,
    DiffusionBackend,
    FeatureMap,
    LatentOrigin,
    LatentState,
)
from dynadrag.backend.kv_injection import KVInjectionController
from dynadrag.backend.lora import collect_lora_state, inject_lora, remove_lora, save_adapter
from dynadrag.backend.schedule import DdimSchedule

logger = logging.getLogger(__name__)

DEFAULT_MODEL_ENV = "DYNADRAG_SD_MODEL"


class LdmBackend(DiffusionBackend):
    kind = "ldm"
    latent_channels = 4
    downscale = 8

    def __init__(self, model_id: "str | None" = None, device: str = "cpu",
                 dtype: torch.dtype = torch.float32, ddim_steps: int = 50):
        try:
            from diffusers import AutoencoderKL, UNet2DConditionModel
            from transformers import CLIPTextModel, CLIPTokenizer
        except ImportError as exc:
            raise BackendError(
                "the ldm backend needs the optional dependencies: "
                "pip install 'dynadrag[ldm]'") from exc

        model_id = model_id or os.environ.get(DEFAULT_MODEL_ENV)
        if not model_id:
            raise BackendError(
                f"no model weights configured; set backend.model_id or ${DEFAULT_MODEL_ENV} "
                "to a Stable Diffusion 1.5 checkpoint path or hub id")

        self.device = torch.device(device)
        self.dtype = dtype
        self.model_id = model_id
        self.vae = AutoencoderKL.from_pretrained(model_id, subfolder="vae").to(self.device, dtype)
        self.unet = UNet2DConditionModel.from_pretrained(model_id, subfolder="unet").to(self.device, dtype)
        tokenizer = CLIPTokenizer.from_pretrained(model_id, subfolder="tokenizer")
        text_encoder = CLIPTextModel.from_pretrained(model_id, subfolder="text_encoder").to(self.device, dtype)
        self.vae.requires_grad_(False)
        self.unet.requires_grad_(False)
        text_encoder.requires_grad_(False)

        with torch.no_grad():
            tokens = tokenizer("", padding="max_length",
                               max_length=tokenizer.model_max_length, return_tensors="pt")
            self.empty_embedding = text_encoder(tokens.input_ids.to(self.device))[0]

        self.schedule = DdimSchedule(ddim_steps)
        self.feature_channels = self.unet.up_blocks[-1].resnets[-1].out_channels
        self.kv_controller = KVInjectionController.for_self_attention(self.unet, "attn1")
        self.kv_controller.attach()
        self.active_adapter: "str | None" = None
        self._scaling = getattr(self.vae.config, "scaling_factor", 0.18215)

    # -- codec ---------------------------------------------------------------

    def encode_image(self, image: np.ndarray) -> torch.Tensor:
        image = np.asarray(image, dtype=np.float32)
        if image.ndim != 3 or image.shape[2] != 3:
            raise BackendError(f"expected (H, W, 3) image, got {image.shape}")
        x = torch.from_numpy(image).permute(2, 0, 1).unsqueeze(0).to(self.device, self.dtype)
        x = x * 2.0 - 1.0
        with torch.no_grad():
            z = self.vae.encode(x).latent_dist.mean * self._scaling
        return z[0]

    def decode_latent(self, z: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            x = self.vae.decode(z.unsqueeze(0).to(self.device, self.dtype) / self._scaling).sample
        x = (x / 2 + 0.5).clamp(0, 1)[0].permute(1, 2, 0)
        return x.float().cpu().numpy()

    # -- denoiser ------------------------------------------------------------

    def _eps(self, z: torch.Tensor, train_timestep: int) -> torch.Tensor:
        t = torch.tensor([train_timestep], device=self.device)
        return self.unet(z.unsqueeze(0), t, encoder_hidden_states=self.empty_embedding).sample[0]

    def ddim_invert(self, z_0: torch.Tensor, steps: int) -> list[LatentState]:
        if steps != self.schedule.num_inference_steps:
            self.schedule = DdimSchedule(steps)
        states = []
        z = z_0
        with torch.no_grad():
            for i in range(1, steps + 1):
                z = self.schedule.invert_step(self._eps, z, i)
                if not torch.isfinite(z).all():
                    raise BackendError(f"non-finite latent during inversion at step {i}")
                states.append(LatentState(z.clone(), i, LatentOrigin.INVERTED))
        return states

    def denoise_step(self, state: LatentState, kv_source: "LatentState | None" = None) -> LatentState:
        if state.t < 1:
            raise BackendError("cannot denoise below t=0")
        self._check_kv_timesteps(state, kv_source)
        tau = self.schedule.timestep(state.t)
        if kv_source is None:
            eps = self._eps(state.z_t, tau)
        else:
            with torch.no_grad(), self.kv_controller.record():
                self._eps(kv_source.z_t, tau)
            with self.kv_controller.inject():
                eps = self._eps(state.z_t, tau)
            self.kv_controller.clear()
        z_prev = self.schedule.denoise_from_eps(state.z_t, eps, state.t)
        return LatentState(z_prev, state.t - 1, state.origin)

    def extract_features(self, state: LatentState) -> FeatureMap:
        captured: list[torch.Tensor] = []

        def hook(_module, _inputs, output):
            captured.append(output)

        handle = self.unet.up_blocks[-1].register_forward_hook(hook)
        try:
            self._eps(state.z_t, self.schedule.timestep(state.t))
        finally:
            handle.remove()
        feats = captured[-1]
        feats = nn.functional.interpolate(
            feats, size=state.z_t.shape[-2:], mode="bilinear", align_corners=False)
        return FeatureMap(feats[0])

    # -- identity adapter ------------------------------------------------------

    def finetune_identity_lora(self, image: np.ndarray, rank: int = 16, steps: int = 200,
                               learning_rate: float = 2e-4, seed: int = 0) -> str:
        remove_lora(self.unet)
        layers = inject_lora(self.unet, rank)
        params = [p for layer in layers for p in layer.lora_parameters()]
        z0 = self.encode_image(image)
        gen = torch.Generator(device="cpu").manual_seed(seed)
        optimizer = torch.optim.AdamW(params, lr=learning_rate)
        first_loss = last_loss = None
        for step in range(steps):
            tau = int(torch.randint(0, len(self.schedule.alphas_cumprod), (1,), generator=gen))
            noise = torch.randn(z0.shape, generator=gen).to(self.device, self.dtype)
            z_noisy = self.schedule.add_noise(z0, noise, tau)
            eps = self._eps(z_noisy, tau)
            loss = nn.functional.mse_loss(eps, noise)
            if not torch.isfinite(loss):
                raise BackendError(f"non-finite adapter loss at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            last_loss = float(loss)
            if first_loss is None:
                first_loss = last_loss
        if steps:
            logger.info("identity adapter: loss %.4f -> %.4f over %d steps",
                        first_loss, last_loss, steps)
        self.active_adapter = f"lora-r{rank}-{seed}"
        self._adapter_rank = rank
        return self.active_adapter

    def save_active_adapter(self, path: str) -> None:
        if self.active_adapter is None:
            raise BackendError("no adapter has been fine-tuned")
        save_adapter(path, collect_lora_state(self.unet), self.model_id, self._adapter_rank)
