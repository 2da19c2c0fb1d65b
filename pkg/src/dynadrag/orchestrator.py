"""The predict-and-move edit loop.

Per iteration: score handle/target feature similarity, refresh the valid
set, predict the next handle positions from the encoded image, drag the
latent after them, then denoise with keys/values injected from the original
image's trajectory and decode the intermediate result. Stops when every
valid handle sits within ``stop_distance`` of its target, or at the
iteration cap.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import torch

from dynadrag.backend import DiffusionBackend, LatentState, sample_feature
from dynadrag.config import EditConfig, SelectionMode
from dynadrag.core import MaskImage, PointPair, pixel_to_latent
from dynadrag.predictor.encoding import EncodedInput, encode_input, normalize_image
from dynadrag.predictor.motion import advance_handles
from dynadrag.supervision import SupervisionContext, optimize_latent

logger = logging.getLogger(__name__)


class FlowPredictorLike(Protocol):
    def predict(self, encoded: EncodedInput): ...


class EditError(RuntimeError):
    def __init__(self, iteration: int, trace: "EditTrace", cause: BaseException):
        super().__init__(f"edit failed at iteration {iteration}: {cause}")
        self.iteration = iteration
        self.trace = trace


@dataclass
class IterationRecord:
    iteration: int
    valid_pair_indices: list[int]
    similarities: list[float]
    predicted_next_positions: list["list[float] | None"]
    ms_loss_curve: list[dict]
    handle_positions: list[list[float]]
    intermediate_image: "str | None" = None
    image: "np.ndarray | None" = None  # in-memory decode, not serialized

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "valid_pair_indices": self.valid_pair_indices,
            "similarities": self.similarities,
            "predicted_next_positions": self.predicted_next_positions,
            "ms_loss_curve": self.ms_loss_curve,
            "handle_positions": self.handle_positions,
            "intermediate_image": self.intermediate_image,
        }


@dataclass
class EditTrace:
    seed: int = 0
    selection_mode: str = "ADS"
    rs_seed: "int | None" = None
    records: list[IterationRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {
            "session": {"seed": self.seed, "selection_mode": self.selection_mode,
                        "rs_seed": self.rs_seed},
            "iterations": [r.to_dict() for r in self.records],
        }

    def save(self, path: "str | Path") -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass
class EditSession:
    image: np.ndarray            # (H, W, 3), uint8 or float in [0, 1]
    pairs: list[PointPair]
    mask: MaskImage
    config: EditConfig
    backend: DiffusionBackend
    predictor: FlowPredictorLike
    seed: int = 0
    # Skip in-loop fine-tuning when the backend already carries an adapter
    # fitted on this image (the service fits once per session).
    reuse_adapter: bool = False

    def __post_init__(self):
        self.image = normalize_image(self.image)
        h, w, _ = self.image.shape
        if (self.mask.height, self.mask.width) != (h, w):
            raise ValueError(f"mask {self.mask.width}x{self.mask.height} does not "
                             f"match image {w}x{h}")
        if not self.pairs:
            raise ValueError("at least one handle/target pair is required")
        for i, pair in enumerate(self.pairs):
            for label, p in (("handle", pair.handle), ("target", pair.target)):
                if not (0 <= p.x <= w - 1 and 0 <= p.y <= h - 1):
                    raise ValueError(f"pair {i}: {label} {p} outside {w}x{h} image")


@dataclass
class EditResult:
    final_image: np.ndarray
    trace: EditTrace


def compute_similarities(backend: DiffusionBackend, state: LatentState,
                         pairs: list[PointPair]) -> list[float]:
    """Cosine similarity between the feature vectors at each pair's handle
    and target (latent coordinates). Zero-norm vectors score 1.0 so the
    selection step filters them out as no-signal."""
    fm = backend.extract_features(state)
    sims = []
    for i, pair in enumerate(pairs):
        h = pixel_to_latent(pair.handle, backend.downscale)
        t = pixel_to_latent(pair.target, backend.downscale)
        fh = sample_feature(fm, h.x, h.y).detach()
        ft = sample_feature(fm, t.x, t.y).detach()
        nh, nt = float(fh.norm()), float(ft.norm())
        if nh == 0.0 or nt == 0.0:
            logger.warning("pair %d has a zero-norm feature vector; scoring 1.0", i)
            sims.append(1.0)
            continue
        sims.append(float(torch.dot(fh, ft)) / (nh * nt))
    return sims


def _ads_valid_indices(similarities: list[float], threshold: float) -> list[int]:
    below = [i for i, s in enumerate(similarities) if s < threshold]
    if below:
        return below
    return [int(np.argmin(similarities))]  # keep the least-similar pair


def select_valid_points(pairs: list[PointPair], similarities: list[float],
                        mode: "SelectionMode | str", threshold: float,
                        rng: "np.random.Generator | None" = None,
                        iteration: int = 0) -> list[PointPair]:
    """Refresh the valid flags; pairs are never removed. ADS applies every
    call; FDS only at iteration 0 (frozen afterwards); RS picks uniformly at
    random as many pairs as ADS would; OFF keeps everything valid."""
    mode = SelectionMode.parse(mode)
    if len(similarities) != len(pairs):
        raise ValueError("similarities must align with pairs")
    out = [p.copy() for p in pairs]
    if mode is SelectionMode.OFF:
        for p in out:
            p.valid = True
        return out
    if mode is SelectionMode.FDS and iteration > 0:
        return out  # validity frozen after the first iteration
    ads = _ads_valid_indices(similarities, threshold)
    if mode is SelectionMode.RS:
        if rng is None:
            raise ValueError("RS mode needs an rng")
        chosen = set(rng.choice(len(pairs), size=len(ads), replace=False).tolist())
    else:
        chosen = set(ads)
    for i, p in enumerate(out):
        p.valid = i in chosen
    return out


def is_converged(pairs: list[PointPair], stop_distance: float) -> bool:
    valid = [p for p in pairs if p.valid]
    if not valid:
        return False
    return all(p.distance_to_target() <= stop_distance for p in valid)


def run_edit(session: EditSession,
             on_iteration: "Callable[[IterationRecord], None] | None" = None) -> EditResult:
    cfg = session.config
    backend = session.backend
    trace = EditTrace(seed=session.seed, selection_mode=cfg.selection_mode.value)
    rng = None
    if cfg.selection_mode is SelectionMode.RS:
        trace.rs_seed = session.seed
        rng = np.random.default_rng(session.seed)

    if not (session.reuse_adapter and getattr(backend, "active_adapter", None)):
        backend.finetune_identity_lora(session.image, rank=cfg.lora_rank,
                                       steps=cfg.lora_steps,
                                       learning_rate=cfg.lora_learning_rate,
                                       seed=session.seed)

    z0 = backend.encode_image(session.image)
    z_t0 = backend.ddim_invert(z0, cfg.ddim_steps)[-1]
    # Frozen per-timestep references: KV sources and the t-1 mask anchor.
    kv_sources: dict[int, LatentState] = {z_t0.t: z_t0}
    with torch.no_grad():
        cur = z_t0
        while cur.t > 0:
            cur = backend.denoise_step(cur)
            kv_sources[cur.t] = cur
    z_tm1_ref = kv_sources[cfg.ddim_steps - 1].z_t.detach().clone()
    mask_latent = session.mask.downsampled(backend.downscale)

    pairs = [p.copy() for p in session.pairs]
    current_image = session.image
    z_t_cur = z_t0
    optimized: "LatentState | None" = None

    for k in range(cfg.max_iterations):
        if is_converged(pairs, cfg.stop_distance):
            break
        try:
            if k > 0:
                if cfg.carry_latent and optimized is not None:
                    z_t_cur = optimized
                else:
                    z_t_cur = backend.ddim_invert(
                        backend.encode_image(current_image), cfg.ddim_steps)[-1]

            with torch.no_grad():
                sims = compute_similarities(backend, z_t_cur, pairs)
            pairs = select_valid_points(pairs, sims, cfg.selection_mode,
                                        cfg.similarity_threshold, rng, iteration=k)

            encoded = encode_input(current_image, pairs, cfg.heatmap_radius)
            flow = session.predictor.predict(encoded)
            advanced = advance_handles(pairs, flow)

            ctx = SupervisionContext(
                backend=backend, z_t_current=z_t_cur, z_t_original=z_t0,
                z_tm1_reference=z_tm1_ref, mask_latent=mask_latent,
                pairs=[p for p in advanced if p.valid], config=cfg)
            optimized, ms_trace = optimize_latent(ctx)

            with torch.no_grad():
                clean = backend.denoise_to_clean(optimized, kv_sources=kv_sources)
                image = backend.decode_latent(clean.z_t)

            pairs = advanced
            current_image = image
            record = IterationRecord(
                iteration=k,
                valid_pair_indices=[i for i, p in enumerate(pairs) if p.valid],
                similarities=[float(s) for s in sims],
                predicted_next_positions=[p.handle.as_list() if p.valid else None
                                          for p in pairs],
                ms_loss_curve=[s.to_dict() for s in ms_trace],
                handle_positions=[p.handle.as_list() for p in pairs],
                image=image,
            )
            trace.records.append(record)
            if on_iteration is not None:
                on_iteration(record)
        except Exception as exc:
            raise EditError(iteration=k, trace=trace, cause=exc) from exc

    if trace.records:
        final_image = trace.records[-1].image
    else:
        # Converged before any supervision step: plain round trip of the input.
        final_image = backend.decode_latent(kv_sources[0].z_t)
    return EditResult(final_image=final_image, trace=trace)
