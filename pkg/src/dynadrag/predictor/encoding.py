"""Six-channel input encoding for the flow predictor.

Channels 0-2 hold the RGB image normalized to [0, 1]; channels 3-4 the
sparse delta map (handle minus target, in raw pixels, written at each valid
handle's rounded position); channel 5 the binary heatmap marking the union
of neighborhoods around valid handles.
"""
from __future__ import annotations

import logging

import numpy as np

from dynadrag.core import PointPair, chebyshev_neighborhood

logger = logging.getLogger(__name__)


class EncodingError(ValueError):
    pass


class EncodedInput:
    """(6, H, W) float32 raster; see module docstring for channel layout."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim != 3 or data.shape[0] != 6:
            raise EncodingError(f"encoded input must be (6, H, W), got {data.shape}")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def rgb(self) -> np.ndarray:
        return self.data[0:3]

    @property
    def delta(self) -> np.ndarray:
        return self.data[3:5]

    @property
    def heatmap(self) -> np.ndarray:
        return self.data[5]


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Accept uint8 or float RGB (H, W, 3); return float32 in [0, 1]."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise EncodingError(f"expected (H, W, 3) image, got {image.shape}")
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return image.astype(np.float32)


def encode_input(image: np.ndarray, pairs: list[PointPair], heatmap_radius: int = 4) -> EncodedInput:
    if heatmap_radius < 0:
        raise EncodingError("heatmap_radius must be >= 0")
    rgb = normalize_image(image)
    h, w, _ = rgb.shape
    data = np.zeros((6, h, w), dtype=np.float32)
    data[0:3] = np.moveaxis(rgb, -1, 0)

    occupied: dict[tuple[int, int], int] = {}
    for idx, pair in enumerate(pairs):
        if not pair.valid:
            continue
        px, py = pair.handle.rounded()
        if not (0 <= px < w and 0 <= py < h):
            raise EncodingError(f"pair {idx}: handle {pair.handle} outside {w}x{h} image")
        if (px, py) in occupied:
            logger.warning("handles %d and %d round to the same pixel (%d, %d); "
                           "last writer wins", occupied[(px, py)], idx, px, py)
        occupied[(px, py)] = idx
        data[3, py, px] = pair.handle.x - pair.target.x
        data[4, py, px] = pair.handle.y - pair.target.y
        for x, y in chebyshev_neighborhood(pair.handle, heatmap_radius, w, h):
            data[5, y, x] = 1.0
    return EncodedInput(data)
