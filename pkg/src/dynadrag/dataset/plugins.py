"""Pluggable flow-estimation and editing-region backends.

External backends are subprocesses exchanging files: extractors receive a
frame PNG path and a destination mask PNG path; estimators receive two frame
PNG paths and a destination ``flow.f32`` path. The concrete networks (flow
models, face parsers, person detectors) live outside this package.
"""
from __future__ import annotations

import abc
import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from dynadrag.core import FlowField, MaskImage
from dynadrag.dataset.records import read_flow_f32
from dynadrag.dataset.video import VideoClip


class RegionExtractor(abc.ABC):
    kind: str = "custom"

    @abc.abstractmethod
    def extract(self, clip: VideoClip, frame_index: int) -> MaskImage:
        """Binary editable-region mask for one frame, at frame size."""


class FlowEstimator(abc.ABC):
    kind: str = "external-model"

    @abc.abstractmethod
    def estimate(self, clip: VideoClip) -> list[FlowField]:
        """S-1 flow fields; flow[i] maps frame i to frame i+1."""


def load_mask_png(path: "str | Path") -> MaskImage:
    gray = np.asarray(Image.open(path).convert("L"))
    return MaskImage((gray > 127).astype(np.uint8))


def save_mask_png(path: "str | Path", mask: MaskImage) -> None:
    Image.fromarray(mask.data * 255).save(path)


class ExternalRegionExtractor(RegionExtractor):
    def __init__(self, command: str, kind: str = "custom"):
        self.command = shlex.split(command)
        self.kind = kind

    def extract(self, clip: VideoClip, frame_index: int) -> MaskImage:
        with tempfile.TemporaryDirectory() as tmp:
            frame_path = Path(tmp) / "frame.png"
            mask_path = Path(tmp) / "mask.png"
            Image.fromarray(clip.frames[frame_index]).save(frame_path)
            subprocess.run(self.command + [str(frame_path), str(mask_path)], check=True)
            mask = load_mask_png(mask_path)
        if (mask.height, mask.width) != (clip.height, clip.width):
            raise ValueError(f"extractor returned {mask.width}x{mask.height} mask "
                             f"for {clip.width}x{clip.height} frames")
        return mask


class ExternalFlowEstimator(FlowEstimator):
    kind = "external-model"

    def __init__(self, command: str):
        self.command = shlex.split(command)

    def estimate(self, clip: VideoClip) -> list[FlowField]:
        flows = []
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            paths = []
            for i, frame in enumerate(clip.frames):
                p = tmp / f"frame_{i:04d}.png"
                Image.fromarray(frame).save(p)
                paths.append(p)
            for i in range(len(clip) - 1):
                out = tmp / f"flow_{i:04d}.f32"
                subprocess.run(self.command + [str(paths[i]), str(paths[i + 1]), str(out)],
                               check=True)
                flow = read_flow_f32(out)
                if (flow.height, flow.width) != (clip.height, clip.width):
                    raise ValueError(f"estimator returned {flow.width}x{flow.height} flow "
                                     f"for {clip.width}x{clip.height} frames")
                flows.append(flow)
        return flows
