"""Training-sample construction: handle sampling, flow chaining, windows.

A sample takes a start frame s (uniform over admissible starts), an end
frame e uniform in [s+15, min(s+55, S-1)], draws 1..7 handle points inside
the editing region with probability proportional to flow magnitude, and
chains per-frame flow to place each handle's target in the end frame. The
start frame's flow field is the training ground truth.
"""
from __future__ import annotations

import hashlib
import logging

import numpy as np

from dynadrag.core import FlowField, MaskImage, Point, PointPair
from dynadrag.dataset.plugins import FlowEstimator, RegionExtractor
from dynadrag.dataset.records import MAX_HANDLES, TrainingSample
from dynadrag.dataset.video import WINDOW_MAX, WINDOW_MIN, VideoClip

logger = logging.getLogger(__name__)


class SampleRejected(RuntimeError):
    """The clip cannot yield a sample (empty region or static scene)."""


def _source_entropy(source_id: str) -> int:
    return int.from_bytes(hashlib.sha256(source_id.encode()).digest()[:8], "little")


def sample_handles(region: MaskImage, flow: FlowField, rng_seed: int,
                   max_points: int = MAX_HANDLES) -> list[Point]:
    """Draw n ~ U{1..max_points} handle positions without replacement from
    the region, weighted by flow magnitude. Deterministic per seed."""
    rng = np.random.default_rng(rng_seed)
    ys, xs = np.nonzero(region.data)
    if len(xs) == 0:
        raise SampleRejected("editing region is empty")
    weights = flow.magnitude()[ys, xs].astype(np.float64)
    total = weights.sum()
    if total <= 0:
        raise SampleRejected("static scene: all in-region flow magnitudes are zero")
    n = int(rng.integers(1, max_points + 1))
    available = int(np.count_nonzero(weights))
    n = min(n, available)  # zero-mass pixels can never be drawn
    chosen = rng.choice(len(xs), size=n, replace=False, p=weights / total)
    return [Point(float(xs[i]), float(ys[i])) for i in chosen]


def chain_flow(flows: list[FlowField], start: Point, s: int, e: int) -> Point:
    """Follow per-frame flow from frame s to frame e, sampling bilinearly at
    each intermediate position and clamping to bounds every step."""
    if not (0 <= s < e <= len(flows)):
        raise ValueError(f"window [{s}, {e}] not covered by {len(flows)} flows")
    p = start
    for i in range(s, e):
        dx, dy = flows[i].sample(p)
        p = p.offset(dx, dy).clamped(flows[i].width, flows[i].height)
    return p


def build_sample(clip: VideoClip, extractor: RegionExtractor, estimator: FlowEstimator,
                 rng_seed: int) -> TrainingSample:
    total = len(clip)
    if total < WINDOW_MIN + 1:
        raise ValueError(f"clip {clip.source_id!r} too short: {total} frames "
                         f"(needs >= {WINDOW_MIN + 1})")
    rng = np.random.default_rng([rng_seed, _source_entropy(clip.source_id)])
    flows = estimator.estimate(clip)

    max_start = total - 1 - WINDOW_MIN
    s = int(rng.integers(0, max_start + 1))
    e = int(rng.integers(s + WINDOW_MIN, min(s + WINDOW_MAX, total - 1) + 1))

    region = extractor.extract(clip, s)
    if (region.height, region.width) != (clip.height, clip.width):
        raise ValueError("editing region size must match the frames")
    handle_seed = int(rng.integers(0, 2 ** 63 - 1))
    handles = sample_handles(region, flows[s], handle_seed)

    pairs = [PointPair(handle=h, target=chain_flow(flows, h, s, e)) for h in handles]
    return TrainingSample(
        start_frame=clip.frames[s],
        pairs=pairs,
        gt_flow=flows[s],
        meta={"source_id": clip.source_id, "s": s, "e": e, "seed": rng_seed},
    )
