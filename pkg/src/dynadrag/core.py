"""Shared geometry and raster types.

Coordinate convention used everywhere: ``x`` is the column, ``y`` is the row,
origin at the top-left pixel. Fractional coordinates are legal; rounding
happens only when rasterizing or building integer neighborhoods.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def round_half_up(v: float) -> int:
    """Round to nearest integer, ties away from zero toward +inf."""
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def rounded(self) -> tuple[int, int]:
        return round_half_up(self.x), round_half_up(self.y)

    def clamped(self, width: int, height: int) -> "Point":
        return Point(min(max(self.x, 0.0), width - 1.0), min(max(self.y, 0.0), height - 1.0))

    def distance_to(self, other: "Point") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def offset(self, dx: float, dy: float) -> "Point":
        return Point(self.x + dx, self.y + dy)

    def as_list(self) -> list[float]:
        return [float(self.x), float(self.y)]


@dataclass
class PointPair:
    """A handle point, its fixed target, and the handle's position history.

    ``history[0]`` is the user-provided handle; ``handle`` always equals
    ``history[-1]``. ``valid`` is toggled by dynamic selection and never
    removes the pair from its session.
    """

    handle: Point
    target: Point
    history: list[Point] = field(default_factory=list)
    valid: bool = True

    def __post_init__(self):
        if not self.history:
            self.history = [self.handle]
        if self.history[-1] != self.handle:
            raise ValueError("handle must equal history[-1]")

    @property
    def previous(self) -> Point:
        """Position before the most recent advance."""
        if len(self.history) < 2:
            raise ValueError("pair has no previous position (no advance recorded)")
        return self.history[-2]

    def advanced(self, new_handle: Point) -> "PointPair":
        return PointPair(
            handle=new_handle,
            target=self.target,
            history=list(self.history) + [new_handle],
            valid=self.valid,
        )

    def copy(self) -> "PointPair":
        return PointPair(self.handle, self.target, list(self.history), self.valid)

    def distance_to_target(self) -> float:
        return self.handle.distance_to(self.target)


def chebyshev_neighborhood(p: Point, r: int, width: int, height: int) -> set[tuple[int, int]]:
    """Integer (x, y) positions with L-inf distance <= r from the rounded
    center, intersected with the image bounds."""
    if r < 0:
        raise ValueError("radius must be >= 0")
    if not (math.isfinite(p.x) and math.isfinite(p.y)):
        raise ValueError("point coordinates must be finite")
    cx, cy = p.rounded()
    xs = range(max(cx - r, 0), min(cx + r, width - 1) + 1)
    ys = range(max(cy - r, 0), min(cy + r, height - 1) + 1)
    return {(x, y) for x in xs for y in ys}


def pixel_to_latent(p: Point, downscale: int) -> Point:
    """Map a pixel-space point to latent/feature-space coordinates."""
    if downscale < 1:
        raise ValueError("downscale must be >= 1")
    return Point(p.x / downscale, p.y / downscale)


def bilinear_sample(data: np.ndarray, x: float, y: float) -> np.ndarray:
    """Sample a (C, H, W) raster at fractional (x, y) with border clamping.

    At integer coordinates the raster value is returned exactly.
    """
    _, h, w = data.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    wx, wy = x - x0, y - y0
    top = data[:, y0, x0] * (1 - wx) + data[:, y0, x1] * wx
    bot = data[:, y1, x0] * (1 - wx) + data[:, y1, x1] * wx
    return top * (1 - wy) + bot * wy


@dataclass
class FlowField:
    """Per-pixel displacement raster: channel 0 holds dx, channel 1 dy,
    both in pixels."""

    data: np.ndarray  # (2, H, W) float32

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != 2:
            raise ValueError(f"flow must be (2, H, W), got {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def sample(self, p: Point) -> tuple[float, float]:
        """Bilinear displacement at a fractional position."""
        dx, dy = bilinear_sample(self.data, p.x, p.y)
        return float(dx), float(dy)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.data[0] ** 2 + self.data[1] ** 2)

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((2, height, width), dtype=np.float32))

    @classmethod
    def constant(cls, height: int, width: int, dx: float, dy: float) -> "FlowField":
        data = np.empty((2, height, width), dtype=np.float32)
        data[0] = dx
        data[1] = dy
        return cls(data)


@dataclass
class MaskImage:
    """Binary editable-region mask: 1 = editable, 0 = must be preserved."""

    data: np.ndarray  # (H, W) uint8 in {0, 1}

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError(f"mask must be (H, W), got {self.data.shape}")
        uniq = np.unique(self.data)
        if not np.all(np.isin(uniq, (0, 1))):
            raise ValueError("mask values must be 0 or 1")
        self.data = self.data.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def ones(cls, height: int, width: int) -> "MaskImage":
        return cls(np.ones((height, width), dtype=np.uint8))

    def downsampled(self, factor: int) -> "MaskImage":
        """Area-majority downsample: a block maps to 1 iff its mean > 0.5."""
        h, w = self.data.shape
        if h % factor or w % factor:
            raise ValueError(f"mask {h}x{w} not divisible by {factor}")
        blocks = self.data.reshape(h // factor, factor, w // factor, factor)
        return MaskImage((blocks.mean(axis=(1, 3)) > 0.5).astype(np.uint8))
