"""Synthetic rigid-motion clips with analytically known flow.

These drive the dataset-builder tests and desk-scale training runs: a
square translating at constant velocity over a plain background, plus dense
rotation fields for flow-chaining checks against the closed-form motion.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dynadrag.core import FlowField, MaskImage
from dynadrag.dataset.plugins import FlowEstimator, RegionExtractor
from dynadrag.dataset.video import VideoClip, save_clip_dir


@dataclass
class SyntheticClip(VideoClip):
    motion: dict = field(default_factory=dict)


def _square_origin(motion: dict, frame_index: int) -> tuple[float, float]:
    x0, y0 = motion["square"]["x0"], motion["square"]["y0"]
    vx, vy = motion["velocity"]
    return x0 + frame_index * vx, y0 + frame_index * vy


def _square_mask(motion: dict, frame_index: int, height: int, width: int) -> np.ndarray:
    ox, oy = _square_origin(motion, frame_index)
    size = motion["square"]["size"]
    mask = np.zeros((height, width), dtype=np.uint8)
    x0, y0 = int(round(ox)), int(round(oy))
    mask[y0:y0 + size, x0:x0 + size] = 1
    return mask


def make_translating_square_clip(width: int = 96, height: int = 64, n_frames: int = 60,
                                 velocity: tuple[float, float] = (1.0, 0.0),
                                 square_size: int = 16, start: tuple[int, int] = (4, 24),
                                 color: tuple[int, int, int] = (220, 60, 60),
                                 background: int = 32,
                                 source_id: str = "synthetic") -> SyntheticClip:
    vx, vy = velocity
    x_end = start[0] + (n_frames - 1) * vx
    y_end = start[1] + (n_frames - 1) * vy
    if not (0 <= min(start[0], x_end) and max(start[0], x_end) + square_size <= width
            and 0 <= min(start[1], y_end) and max(start[1], y_end) + square_size <= height):
        raise ValueError("square leaves the frame; shrink velocity/frames or move start")
    motion = {
        "type": "translation",
        "velocity": [float(vx), float(vy)],
        "square": {"x0": start[0], "y0": start[1], "size": square_size},
    }
    frames = []
    for i in range(n_frames):
        frame = np.full((height, width, 3), background, dtype=np.uint8)
        frame[_square_mask(motion, i, height, width) == 1] = color
        frames.append(frame)
    return SyntheticClip(frames=frames, fps=25.0, source_id=source_id, motion=motion)


def save_synthetic_clip(path: "str | Path", clip: SyntheticClip) -> None:
    save_clip_dir(path, clip)
    (Path(path) / "motion.json").write_text(json.dumps(clip.motion, sort_keys=True))


def load_motion(path: "str | Path") -> dict:
    return json.loads((Path(path) / "motion.json").read_text())


def load_synthetic_clip(path: "str | Path", fps: float = 25.0) -> SyntheticClip:
    from dynadrag.dataset.video import load_clip_dir

    clip = load_clip_dir(path, fps=fps)
    return SyntheticClip(frames=clip.frames, fps=clip.fps,
                         source_id=clip.source_id, motion=load_motion(path))


def translation_flow(motion: dict, frame_index: int, height: int, width: int) -> FlowField:
    data = np.zeros((2, height, width), dtype=np.float32)
    inside = _square_mask(motion, frame_index, height, width) == 1
    data[0][inside] = motion["velocity"][0]
    data[1][inside] = motion["velocity"][1]
    return FlowField(data)


class SyntheticFlowEstimator(FlowEstimator):
    """Oracle estimator: reads the clip's motion descriptor and emits the
    exact analytic flow for every frame transition."""

    kind = "synthetic-oracle"

    def __init__(self, motion: "dict | None" = None):
        self.motion = motion

    def _motion_for(self, clip: VideoClip) -> dict:
        motion = self.motion or getattr(clip, "motion", None)
        if motion is None:
            raise ValueError("synthetic estimator needs a clip with a motion descriptor")
        return motion

    def estimate(self, clip: VideoClip) -> list[FlowField]:
        motion = self._motion_for(clip)
        if motion["type"] != "translation":
            raise ValueError(f"unsupported synthetic motion {motion['type']!r}")
        return [translation_flow(motion, i, clip.height, clip.width)
                for i in range(len(clip) - 1)]


class SyntheticRegionExtractor(RegionExtractor):
    """Oracle extractor: the editing region is exactly the moving object."""

    kind = "custom"

    def __init__(self, motion: "dict | None" = None):
        self.motion = motion

    def extract(self, clip: VideoClip, frame_index: int) -> MaskImage:
        motion = self.motion or getattr(clip, "motion", None)
        if motion is None:
            raise ValueError("synthetic extractor needs a clip with a motion descriptor")
        return MaskImage(_square_mask(motion, frame_index, clip.height, clip.width))


def make_rotation_flows(height: int, width: int, center: tuple[float, float],
                        omega: float, count: int) -> list[FlowField]:
    """Dense per-frame fields rotating content by ``omega`` radians around
    ``center``. The field is linear in (x, y), so bilinear sampling is exact
    and chained positions match the closed-form rotation."""
    cx, cy = center
    cos_w, sin_w = math.cos(omega), math.sin(omega)
    gy, gx = np.mgrid[0:height, 0:width].astype(np.float64)
    rx, ry = gx - cx, gy - cy
    data = np.stack([
        (cos_w * rx - sin_w * ry) - rx,
        (sin_w * rx + cos_w * ry) - ry,
    ]).astype(np.float32)
    return [FlowField(data.copy()) for _ in range(count)]


def rotate_point(x: float, y: float, center: tuple[float, float], angle: float) -> tuple[float, float]:
    cx, cy = center
    rx, ry = x - cx, y - cy
    return (cx + math.cos(angle) * rx - math.sin(angle) * ry,
            cy + math.sin(angle) * rx + math.cos(angle) * ry)
