"""Motion supervision: drag the latent so features at each handle's next
position match the (gradient-stopped) features at its current position,
while an L1 penalty pins the non-editable region to the reference latent
one denoising step ahead.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch

from dynadrag.backend import DiffusionBackend, FeatureMap, LatentOrigin, LatentState, gather_patch
from dynadrag.config import EditConfig
from dynadrag.core import MaskImage, PointPair, pixel_to_latent


@dataclass
class SupervisionContext:
    backend: DiffusionBackend
    z_t_current: LatentState                 # z at iteration k, to be optimized
    z_t_original: LatentState                # frozen inversion of the input image
    z_tm1_reference: torch.Tensor            # frozen one-step-denoised original
    mask_latent: MaskImage                   # editable mask at latent resolution
    pairs: list[PointPair]                   # valid pairs carrying h^k and h^{k+1}
    config: EditConfig = field(default_factory=EditConfig)

    def __post_init__(self):
        _, h, w = self.z_t_current.z_t.shape
        if (self.mask_latent.height, self.mask_latent.width) != (h, w):
            raise ValueError(f"mask {self.mask_latent.width}x{self.mask_latent.height} "
                             f"does not match latent {w}x{h}")

    def with_latent(self, state: LatentState) -> "SupervisionContext":
        return SupervisionContext(self.backend, state, self.z_t_original,
                                  self.z_tm1_reference, self.mask_latent,
                                  self.pairs, self.config)


@dataclass
class MsStep:
    loss: float
    term1: float
    term2: float

    def to_dict(self) -> dict:
        return {"loss": self.loss, "term1": self.term1, "term2": self.term2}


def _active_pairs(ctx: SupervisionContext) -> list[PointPair]:
    pairs = [p for p in ctx.pairs if p.valid]
    if not pairs:
        raise ValueError("motion supervision needs at least one valid pair")
    for i, pair in enumerate(pairs):
        if len(pair.history) < 2:
            raise ValueError(f"pair {i} has no predicted next position; "
                             "run motion prediction first")
    return pairs


def ms_loss_terms(ctx: SupervisionContext) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(total, term1, term2): feature-drag term plus lambda-weighted
    unmasked-region preservation term."""
    pairs = _active_pairs(ctx)
    backend = ctx.backend
    r1 = ctx.config.r1_patch_radius
    fm: FeatureMap = backend.extract_features(ctx.z_t_current)

    z = ctx.z_t_current.z_t
    term1 = z.new_zeros(())
    for pair in pairs:
        cur = pixel_to_latent(pair.previous, backend.downscale)    # h^k
        nxt = pixel_to_latent(pair.handle, backend.downscale)      # h^{k+1}
        src = gather_patch(fm, cur.x, cur.y, r1).detach()
        dst = gather_patch(fm, nxt.x, nxt.y, r1)
        term1 = term1 + (dst - src).abs().sum()

    z_tm1 = backend.denoise_step(ctx.z_t_current).z_t
    keep = torch.as_tensor(1 - ctx.mask_latent.data, dtype=z.dtype, device=z.device)
    term2 = ((z_tm1 - ctx.z_tm1_reference.detach()) * keep).abs().sum()

    total = term1 + ctx.config.lambda_mask * term2
    return total, term1, term2


def ms_loss(ctx: SupervisionContext) -> torch.Tensor:
    return ms_loss_terms(ctx)[0]


def optimize_latent(ctx: SupervisionContext) -> tuple[LatentState, list[MsStep]]:
    """Run the configured number of descent steps on the latent and return
    the optimized state plus the per-step loss trace. The reference latents
    in ``ctx`` are never mutated."""
    cfg = ctx.config
    z = ctx.z_t_current.z_t.detach().clone().requires_grad_(True)
    if cfg.ms_optimizer == "sgd":
        optimizer = torch.optim.SGD([z], lr=cfg.ms_learning_rate)
    else:
        optimizer = torch.optim.Adam([z], lr=cfg.ms_learning_rate)

    trace: list[MsStep] = []
    for step in range(cfg.ms_steps_per_iteration):
        state = LatentState(z, ctx.z_t_current.t, LatentOrigin.OPTIMIZED)
        total, term1, term2 = ms_loss_terms(ctx.with_latent(state))
        if not torch.isfinite(total):
            raise RuntimeError(f"non-finite supervision loss at descent step {step}: "
                               f"term1={float(term1.detach()):.4g} "
                               f"term2={float(term2.detach()):.4g}")
        optimizer.zero_grad()
        total.backward()
        if z.grad is not None and not torch.isfinite(z.grad).all():
            raise RuntimeError(f"non-finite latent gradient at descent step {step}")
        optimizer.step()
        trace.append(MsStep(float(total.detach()), float(term1.detach()),
                            float(term2.detach())))
    return LatentState(z.detach(), ctx.z_t_current.t, LatentOrigin.OPTIMIZED), trace
