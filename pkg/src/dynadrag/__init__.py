"""Predict-and-move drag-style image editing."""

__version__ = "0.1.0"

from dynadrag.config import EditConfig, SelectionMode
from dynadrag.core import FlowField, MaskImage, Point, PointPair

__all__ = [
    "EditConfig",
    "FlowField",
    "MaskImage",
    "Point",
    "PointPair",
    "SelectionMode",
    "__version__",
]
