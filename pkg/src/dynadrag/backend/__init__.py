"""Diffusion backends: the latent machinery the edit loop drives.

Two kinds share one contract: ``toy`` (deterministic identity dynamics,
analyzable at desk scale) and ``ldm`` (a latent diffusion model; optional,
requires the ``dynadrag[ldm]`` extra plus pretrained weights).
"""
from dynadrag.backend.base import (
    BackendError,
    DiffusionBackend,
    FeatureMap,
    LatentOrigin,
    LatentState,
    gather_patch,
    sample_feature,
)
from dynadrag.backend.toy import ToyBackend

__all__ = [
    "BackendError",
    "DiffusionBackend",
    "FeatureMap",
    "LatentOrigin",
    "LatentState",
    "ToyBackend",
    "create_backend",
    "gather_patch",
    "sample_feature",
]


def create_backend(kind: str = "toy", **kwargs) -> DiffusionBackend:
    """Instantiate a backend by config key ``backend.kind``."""
    if kind == "toy":
        return ToyBackend(**kwargs)
    if kind == "ldm":
        from dynadrag.backend.ldm import LdmBackend

        return LdmBackend(**kwargs)
    raise ValueError(f"unknown backend kind: {kind!r} (expected 'toy' or 'ldm')")
