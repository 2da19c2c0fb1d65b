"""Handle advancement along a predicted flow field."""
from __future__ import annotations

import numpy as np

from dynadrag.core import FlowField, Point, PointPair
from dynadrag.predictor.encoding import EncodedInput


def advance_handles(pairs: list[PointPair], flow: FlowField) -> list[PointPair]:
    """Move every valid handle by the flow sampled (bilinearly) at its
    current position, clamped to image bounds; invalid pairs pass through
    unchanged. History grows by one point per advanced pair."""
    out = []
    for pair in pairs:
        if not pair.valid:
            out.append(pair.copy())
            continue
        dx, dy = flow.sample(pair.handle)
        moved = pair.handle.offset(dx, dy).clamped(flow.width, flow.height)
        out.append(pair.advanced(moved))
    return out


class ConstantStepPredictor:
    """Flow stub that moves content a fixed number of pixels per iteration
    straight toward each handle's target, read off the encoded delta map.

    Useful as a weights-free fallback and for closed-form loop tests: a
    handle D pixels from its target converges in ceil(D / step) advances.
    """

    def __init__(self, step: float = 4.0):
        if step <= 0:
            raise ValueError("step must be positive")
        self.step = step

    def predict(self, encoded: EncodedInput) -> FlowField:
        h, w = encoded.height, encoded.width
        delta = encoded.delta
        ys, xs = np.nonzero((delta[0] != 0) | (delta[1] != 0))
        if len(xs) == 0:
            return FlowField.zeros(h, w)
        handles = np.stack([xs, ys], axis=1).astype(np.float64)  # (N, 2) as (x, y)
        # delta = handle - target, so -delta points toward the target
        dirs = -np.stack([delta[0, ys, xs], delta[1, ys, xs]], axis=1).astype(np.float64)
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        steps = np.where(norms <= self.step, dirs, self.step * dirs / np.maximum(norms, 1e-12))

        gy, gx = np.mgrid[0:h, 0:w]
        grid = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)
        d2 = ((grid[:, None, :] - handles[None, :, :]) ** 2).sum(axis=2)
        nearest = d2.argmin(axis=1)
        field = steps[nearest].reshape(h, w, 2)
        return FlowField(np.moveaxis(field, -1, 0).astype(np.float32))
