"""Low-rank adapters for attention projection layers.

Adapters wrap ``nn.Linear`` projections in place: output = base(x) +
scale * up(down(x)). ``up`` starts at zero, so a freshly injected (or
zero-step-trained) adapter leaves the wrapped module's behavior unchanged.
"""
from __future__ import annotations

from pathlib import Path

import torch
from torch import nn

ATTENTION_PROJECTIONS = ("to_q", "to_k", "to_v", "to_out")

ADAPTER_FORMAT_VERSION = 1


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int):
        super().__init__()
        if rank < 1:
            raise ValueError("rank must be >= 1")
        self.base = base
        self.rank = rank
        self.down = nn.Linear(base.in_features, rank, bias=False)
        self.up = nn.Linear(rank, base.out_features, bias=False)
        nn.init.normal_(self.down.weight, std=1.0 / rank)
        nn.init.zeros_(self.up.weight)
        self.base.requires_grad_(False)

    def forward(self, x):
        return self.base(x) + self.up(self.down(x))

    def lora_parameters(self):
        return [self.down.weight, self.up.weight]


def iter_attention_modules(root: nn.Module):
    """Yield (name, module) for submodules that look like attention blocks:
    anything carrying to_q/to_k/to_v projections."""
    for name, module in root.named_modules():
        if all(hasattr(module, p) for p in ("to_q", "to_k", "to_v")):
            yield name, module


def _projection_slots(attn: nn.Module):
    for proj in ATTENTION_PROJECTIONS:
        target = getattr(attn, proj, None)
        if isinstance(target, (nn.Linear, LoRALinear)):
            yield attn, proj, target
        elif isinstance(target, nn.ModuleList) and target and isinstance(target[0], (nn.Linear, LoRALinear)):
            yield target, "0", target[0]  # diffusers keeps to_out as [Linear, Dropout]


def inject_lora(root: nn.Module, rank: int) -> list[LoRALinear]:
    """Wrap every attention projection under ``root`` with a LoRA layer."""
    injected = []
    for _, attn in iter_attention_modules(root):
        for holder, slot, linear in _projection_slots(attn):
            if isinstance(linear, LoRALinear):
                continue
            wrapped = LoRALinear(linear, rank)
            if isinstance(holder, nn.ModuleList):
                holder[int(slot)] = wrapped
            else:
                setattr(holder, slot, wrapped)
            injected.append(wrapped)
    return injected


def remove_lora(root: nn.Module) -> int:
    """Unwrap all LoRA layers, restoring the original projections."""
    removed = 0
    for _, attn in iter_attention_modules(root):
        for holder, slot, linear in list(_projection_slots(attn)):
            if isinstance(linear, LoRALinear):
                if isinstance(holder, nn.ModuleList):
                    holder[int(slot)] = linear.base
                else:
                    setattr(holder, slot, linear.base)
                removed += 1
    return removed


def collect_lora_state(root: nn.Module) -> dict[str, torch.Tensor]:
    state = {}
    for name, module in root.named_modules():
        if isinstance(module, LoRALinear):
            state[f"{name}.down.weight"] = module.down.weight.detach().clone()
            state[f"{name}.up.weight"] = module.up.weight.detach().clone()
    return state


def save_adapter(path: "str | Path", state: dict[str, torch.Tensor],
                 base_model_id: str, rank: int) -> None:
    torch.save({
        "format_version": ADAPTER_FORMAT_VERSION,
        "base_model_id": base_model_id,
        "rank": rank,
        "state": state,
    }, path)


def load_adapter(path: "str | Path", expected_base_model_id: "str | None" = None,
                 expected_rank: "int | None" = None) -> dict[str, torch.Tensor]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_version") != ADAPTER_FORMAT_VERSION:
        raise ValueError(f"unsupported adapter format: {payload.get('format_version')}")
    if expected_base_model_id is not None and payload["base_model_id"] != expected_base_model_id:
        raise ValueError(
            f"adapter was trained for {payload['base_model_id']!r}, "
            f"not {expected_base_model_id!r}")
    if expected_rank is not None and payload["rank"] != expected_rank:
        raise ValueError(f"adapter rank {payload['rank']} != expected {expected_rank}")
    return payload["state"]
