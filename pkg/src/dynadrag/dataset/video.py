"""In-memory video clips and the frames-on-disk clip format.

A clip directory holds ``frame_0000.png, frame_0001.png, ...`` plus an
optional ``motion.json`` sidecar written by the synthetic generator.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# end-frame window relative to the start frame (inclusive)
WINDOW_MIN = 15
WINDOW_MAX = 55


@dataclass
class VideoClip:
    """Ordered RGB frames. Full-range end-frame sampling wants at least
    WINDOW_MAX + 1 frames; anything >= WINDOW_MIN + 1 is usable."""

    frames: list[np.ndarray]  # each (H, W, 3) uint8
    fps: float
    source_id: str

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("a clip needs at least two frames")
        shape = self.frames[0].shape
        if any(f.shape != shape for f in self.frames):
            raise ValueError("all frames must share one size")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].shape[0]

    @property
    def width(self) -> int:
        return self.frames[0].shape[1]


def load_clip_dir(path: "str | Path", fps: float = 25.0) -> VideoClip:
    path = Path(path)
    frame_paths = sorted(path.glob("frame_*.png"))
    if not frame_paths:
        raise FileNotFoundError(f"no frame_*.png files in {path}")
    frames = [np.asarray(Image.open(p).convert("RGB")) for p in frame_paths]
    return VideoClip(frames=frames, fps=fps, source_id=path.name)


def save_clip_dir(path: "str | Path", clip: VideoClip) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        Image.fromarray(frame).save(path / f"frame_{i:04d}.png")
