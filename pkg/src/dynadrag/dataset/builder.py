"""Corpus-level dataset building: iterate clips, derive per-clip seeds,
write records, and split train/test by source id."""
from __future__ import annotations

import hashlib
import logging
from pathlib import Path

from dynadrag.dataset.records import save_sample
from dynadrag.dataset.sampling import SampleRejected, build_sample
from dynadrag.dataset.video import VideoClip

logger = logging.getLogger(__name__)

TRAIN_FRACTION = 95  # percent of source videos routed to train


def split_bucket(source_id: str) -> str:
    digest = hashlib.sha256(source_id.encode()).digest()
    return "train" if digest[0] * 256 + digest[1] < TRAIN_FRACTION * 65536 // 100 else "test"


def build_dataset_from_clips(clips, extractor, estimator, seed: int,
                             out_dir: "str | Path", samples_per_clip: int = 1) -> list[Path]:
    """Write one record directory per (clip, draw); rejected draws are
    skipped and logged. Fully reproducible from (clip source ids, seed)."""
    out_dir = Path(out_dir)
    written = []
    for clip in clips:
        assert isinstance(clip, VideoClip)
        bucket = split_bucket(clip.source_id)
        for draw in range(samples_per_clip):
            draw_seed = seed * 100_003 + draw
            try:
                sample = build_sample(clip, extractor, estimator, draw_seed)
            except SampleRejected as exc:
                logger.warning("skipping %s draw %d: %s", clip.source_id, draw, exc)
                continue
            name = f"{clip.source_id}_s{sample.meta['s']:04d}_e{sample.meta['e']:04d}_d{draw}"
            written.append(save_sample(out_dir / bucket / name, sample))
    return written
