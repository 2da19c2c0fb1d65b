"""On-disk training-sample records.

One directory per sample: ``frame.png`` (start frame), ``flow.f32``
(ground-truth flow), ``pairs.json`` (handle/target pixel coordinates), and
``meta.json``. ``flow.f32`` is three little-endian uint32 header words
(H, W, 2) followed by row-major H*W*2 little-endian float32 values with the
two displacement channels (dx, dy) interleaved per pixel.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from dynadrag.core import FlowField, Point, PointPair
from dynadrag.dataset.video import WINDOW_MAX, WINDOW_MIN

MAX_HANDLES = 7


@dataclass
class TrainingSample:
    start_frame: np.ndarray  # (H, W, 3) uint8
    pairs: list[PointPair]
    gt_flow: FlowField
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= len(self.pairs) <= MAX_HANDLES:
            raise ValueError(f"sample needs 1..{MAX_HANDLES} pairs, got {len(self.pairs)}")
        h, w, _ = self.start_frame.shape
        if (self.gt_flow.height, self.gt_flow.width) != (h, w):
            raise ValueError("flow size must match the start frame")
        if {"s", "e"} <= self.meta.keys():
            window = self.meta["e"] - self.meta["s"]
            if not WINDOW_MIN <= window <= WINDOW_MAX:
                raise ValueError(f"end-frame window {window} outside "
                                 f"[{WINDOW_MIN}, {WINDOW_MAX}]")


def write_flow_f32(path: "str | Path", flow: FlowField) -> None:
    hwc = np.moveaxis(flow.data, 0, -1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", flow.height, flow.width, 2))
        fh.write(hwc.tobytes())


def read_flow_f32(path: "str | Path") -> FlowField:
    raw = Path(path).read_bytes()
    h, w, c = struct.unpack_from("<III", raw, 0)
    if c != 2:
        raise ValueError(f"{path}: expected 2 channels, header says {c}")
    data = np.frombuffer(raw, dtype="<f4", offset=12)
    if data.size != h * w * 2:
        raise ValueError(f"{path}: payload size {data.size} != {h}*{w}*2")
    return FlowField(np.moveaxis(data.reshape(h, w, 2), -1, 0).copy())


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def save_sample(directory: "str | Path", sample: TrainingSample) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    Image.fromarray(sample.start_frame).save(directory / "frame.png")
    write_flow_f32(directory / "flow.f32", sample.gt_flow)
    _dump_json(directory / "pairs.json",
               [{"handle": p.handle.as_list(), "target": p.target.as_list()}
                for p in sample.pairs])
    _dump_json(directory / "meta.json", sample.meta)
    return directory


def load_sample(directory: "str | Path") -> TrainingSample:
    directory = Path(directory)
    frame = np.asarray(Image.open(directory / "frame.png").convert("RGB"))
    flow = read_flow_f32(directory / "flow.f32")
    pairs = [
        PointPair(handle=Point(*entry["handle"]), target=Point(*entry["target"]))
        for entry in json.loads((directory / "pairs.json").read_text())
    ]
    meta = json.loads((directory / "meta.json").read_text())
    return TrainingSample(start_frame=frame, pairs=pairs, gt_flow=flow, meta=meta)


def list_sample_dirs(root: "str | Path") -> list[Path]:
    root = Path(root)
    return sorted(p.parent for p in root.rglob("pairs.json"))
