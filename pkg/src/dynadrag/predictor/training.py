"""Flow-predictor training: per-pixel MSE against ground-truth flow."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from dynadrag.core import FlowField
from dynadrag.predictor.encoding import EncodedInput
from dynadrag.predictor.model import FlowPredictor


class TrainingBatch:
    """Stacked encoded inputs and ground-truth flow targets."""

    def __init__(self, inputs: list[EncodedInput], targets: list[FlowField]):
        if not inputs:
            raise ValueError("batch must be non-empty")
        if len(inputs) != len(targets):
            raise ValueError("inputs and targets must have the same length")
        for i, (enc, flow) in enumerate(zip(inputs, targets)):
            if (enc.height, enc.width) != (flow.height, flow.width):
                raise ValueError(f"sample {i}: input and target sizes differ")
            if not np.isfinite(flow.data).all():
                raise ValueError(f"sample {i}: target flow has non-finite values")
        self.inputs = torch.from_numpy(np.stack([e.data for e in inputs]))
        self.targets = torch.from_numpy(np.stack([f.data for f in targets]))

    def __len__(self) -> int:
        return self.inputs.shape[0]


class PredictorTrainer:
    """Owns the optimizer state for one training run.

    ``optimizer="adam"`` is the default recipe; ``"sgd"`` gives plain
    descent (useful for exactness checks: a perfect-prediction batch
    leaves the model bitwise unchanged).
    """

    def __init__(self, model: FlowPredictor, learning_rate: float = 1e-3,
                 optimizer: str = "adam", seed: int = 0):
        torch.manual_seed(seed)
        self.model = model
        if optimizer == "adam":
            self.optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
        elif optimizer == "sgd":
            self.optimizer = torch.optim.SGD(model.parameters(), lr=learning_rate)
        else:
            raise ValueError("optimizer must be 'adam' or 'sgd'")

    def train_step(self, batch: TrainingBatch) -> float:
        self.model.train()
        pred = self.model(batch.inputs)
        loss = nn.functional.mse_loss(pred, batch.targets)
        if not torch.isfinite(loss):
            self._raise_diagnostics(batch, pred)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return float(loss.detach())

    def _raise_diagnostics(self, batch: TrainingBatch, pred: torch.Tensor):
        for i in range(len(batch)):
            for name, tensor in (("input", batch.inputs[i]), ("target", batch.targets[i]),
                                 ("prediction", pred[i])):
                if not torch.isfinite(tensor).all():
                    finite = tensor[torch.isfinite(tensor)]
                    peak = float(finite.abs().max()) if finite.numel() else float("nan")
                    raise RuntimeError(
                        f"non-finite loss: {name} of batch sample {i} contains "
                        f"non-finite values (max finite |value| = {peak:.4g})")
        raise RuntimeError("non-finite loss with finite operands (numerical overflow)")


def evaluate_mse(model: FlowPredictor, batch: TrainingBatch) -> float:
    model.eval()
    with torch.no_grad():
        pred = model(batch.inputs)
        return float(nn.functional.mse_loss(pred, batch.targets))
