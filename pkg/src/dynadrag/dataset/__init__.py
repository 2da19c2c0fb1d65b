from dynadrag.dataset.builder import build_dataset_from_clips, split_bucket
from dynadrag.dataset.plugins import (
    ExternalFlowEstimator,
    ExternalRegionExtractor,
    FlowEstimator,
    RegionExtractor,
)
from dynadrag.dataset.records import (
    TrainingSample,
    load_sample,
    read_flow_f32,
    save_sample,
    write_flow_f32,
)
from dynadrag.dataset.sampling import SampleRejected, build_sample, chain_flow, sample_handles
from dynadrag.dataset.synthetic import (
    SyntheticClip,
    SyntheticFlowEstimator,
    SyntheticRegionExtractor,
    make_rotation_flows,
    make_translating_square_clip,
)
from dynadrag.dataset.video import VideoClip, load_clip_dir

__all__ = [
    "ExternalFlowEstimator",
    "ExternalRegionExtractor",
    "FlowEstimator",
    "RegionExtractor",
    "SampleRejected",
    "SyntheticClip",
    "SyntheticFlowEstimator",
    "SyntheticRegionExtractor",
    "TrainingSample",
    "VideoClip",
    "build_dataset_from_clips",
    "build_sample",
    "chain_flow",
    "load_clip_dir",
    "load_sample",
    "make_rotation_flows",
    "make_translating_square_clip",
    "read_flow_f32",
    "sample_handles",
    "save_sample",
    "split_bucket",
    "write_flow_f32",
]
