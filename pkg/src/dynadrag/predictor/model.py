"""Flow-prediction network: a spatial encoder / translator / decoder stack.

Single-frame adaptation of a video-prediction backbone: no temporal
reshaping anywhere, the encoder's first activation skips to the decoder,
and the head emits a 2-channel displacement map at input resolution.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from dynadrag.core import FlowField
from dynadrag.predictor.encoding import EncodedInput

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    in_channels: int = 6
    out_channels: int = 2
    hid_spatial: int = 64
    hid_translator: int = 256
    enc_layers: int = 4
    translator_layers: int = 8
    incep_kernels: tuple[int, ...] = (3, 5, 7, 11)
    groups: int = 8

    @classmethod
    def small(cls) -> "ModelConfig":
        """Desk-scale variant for CPU tests."""
        return cls(hid_spatial=16, hid_translator=32, enc_layers=2,
                   translator_layers=2, incep_kernels=(3, 5), groups=4)


def _strides(n: int, reverse: bool = False) -> list[int]:
    seq = ([1, 2] * ((n + 1) // 2))[:n]
    return seq[::-1] if reverse else seq


class ConvSC(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int, transpose: bool = False):
        super().__init__()
        if transpose and stride > 1:
            self.conv = nn.ConvTranspose2d(c_in, c_out, 3, stride=stride,
                                           padding=1, output_padding=stride - 1)
        else:
            self.conv = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.norm = nn.GroupNorm(2, c_out)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class GroupConv(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, groups: int):
        super().__init__()
        if c_in % groups or c_out % groups:
            groups = 1
        self.conv = nn.Conv2d(c_in, c_out, kernel, padding=kernel // 2, groups=groups)
        self.norm = nn.GroupNorm(groups, c_out)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class Inception(nn.Module):
    def __init__(self, c_in: int, c_hid: int, c_out: int,
                 kernels: tuple[int, ...], groups: int):
        super().__init__()
        self.squeeze = nn.Conv2d(c_in, c_hid, 1)
        self.branches = nn.ModuleList(
            [GroupConv(c_hid, c_out, k, groups) for k in kernels])

    def forward(self, x):
        x = self.squeeze(x)
        out = self.branches[0](x)
        for branch in self.branches[1:]:
            out = out + branch(x)
        return out


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        strides = _strides(cfg.enc_layers)
        layers = [ConvSC(cfg.in_channels, cfg.hid_spatial, strides[0])]
        layers += [ConvSC(cfg.hid_spatial, cfg.hid_spatial, s) for s in strides[1:]]
        self.layers = nn.ModuleList(layers)

    def forward(self, x):
        first = self.layers[0](x)
        z = first
        for layer in self.layers[1:]:
            z = layer(z)
        return z, first


class Translator(nn.Module):
    """Same-resolution inception U-stack; operates on single-frame features
    directly (no temporal fold)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n, hid = cfg.translator_layers, cfg.hid_translator
        k, g = cfg.incep_kernels, cfg.groups
        enc = [Inception(cfg.hid_spatial, hid // 2, hid, k, g)]
        enc += [Inception(hid, hid // 2, hid, k, g) for _ in range(n - 1)]
        if n == 1:
            dec = [Inception(hid, hid // 2, cfg.hid_spatial, k, g)]
        else:
            dec = [Inception(hid, hid // 2, hid, k, g)]
            dec += [Inception(2 * hid, hid // 2, hid, k, g) for _ in range(n - 2)]
            dec += [Inception(2 * hid, hid // 2, cfg.hid_spatial, k, g)]
        self.enc = nn.ModuleList(enc)
        self.dec = nn.ModuleList(dec)
        self.depth = n

    def forward(self, x):
        skips = []
        z = x
        for i, layer in enumerate(self.enc):
            z = layer(z)
            if i < self.depth - 1:
                skips.append(z)
        z = self.dec[0](z)
        for i, layer in enumerate(self.dec[1:], start=1):
            z = layer(torch.cat([z, skips[-i]], dim=1))
        return z


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        strides = _strides(cfg.enc_layers, reverse=True)
        layers = [ConvSC(cfg.hid_spatial, cfg.hid_spatial, s, transpose=True)
                  for s in strides[:-1]]
        layers.append(ConvSC(2 * cfg.hid_spatial, cfg.hid_spatial, strides[-1], transpose=True))
        self.layers = nn.ModuleList(layers)
        self.readout = nn.Conv2d(cfg.hid_spatial, cfg.out_channels, 1)

    def forward(self, z, skip):
        for layer in self.layers[:-1]:
            z = layer(z)
        z = self.layers[-1](torch.cat([z, skip], dim=1))
        return self.readout(z)


class FlowPredictor(nn.Module):
    def __init__(self, config: "ModelConfig | None" = None):
        super().__init__()
        self.config = config or ModelConfig()
        self.encoder = Encoder(self.config)
        self.translator = Translator(self.config)
        self.decoder = Decoder(self.config)

    @property
    def total_stride(self) -> int:
        return int(np.prod(_strides(self.config.enc_layers)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z, skip = self.encoder(x)
        z = self.translator(z)
        return self.decoder(z, skip)

    def predict(self, encoded: EncodedInput) -> FlowField:
        return predict_flow(self, encoded)


def predict_flow(model: FlowPredictor, encoded: EncodedInput) -> FlowField:
    stride = model.total_stride
    if encoded.height % stride or encoded.width % stride:
        raise ValueError(
            f"input {encoded.width}x{encoded.height} is not divisible by the "
            f"encoder stride {stride}; pad the image to a multiple of {stride}")
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(encoded.data).unsqueeze(0)
        out = model(x)[0]
    return FlowField(out.numpy())


def save_checkpoint(path: "str | Path", model: FlowPredictor, meta: "dict | None" = None) -> None:
    torch.save({
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": asdict(model.config),
        "state_dict": model.state_dict(),
        "meta": meta or {},
    }, path)


def load_checkpoint(path: "str | Path", expected_in_channels: int = 6) -> FlowPredictor:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format: {payload.get('format_version')}")
    cfg_dict = dict(payload["model_config"])
    cfg_dict["incep_kernels"] = tuple(cfg_dict["incep_kernels"])
    cfg = ModelConfig(**cfg_dict)
    if cfg.in_channels != expected_in_channels:
        raise ValueError(
            f"checkpoint expects {cfg.in_channels} input channels, "
            f"this pipeline encodes {expected_in_channels}")
    model = FlowPredictor(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
