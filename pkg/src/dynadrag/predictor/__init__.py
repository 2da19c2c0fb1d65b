from dynadrag.predictor.encoding import EncodedInput, EncodingError, encode_input
from dynadrag.predictor.model import (
    FlowPredictor,
    ModelConfig,
    load_checkpoint,
    predict_flow,
    save_checkpoint,
)
from dynadrag.predictor.motion import ConstantStepPredictor, advance_handles
from dynadrag.predictor.training import PredictorTrainer, TrainingBatch

__all__ = [
    "ConstantStepPredictor",
    "EncodedInput",
    "EncodingError",
    "FlowPredictor",
    "ModelConfig",
    "PredictorTrainer",
    "TrainingBatch",
    "advance_handles",
    "encode_input",
    "load_checkpoint",
    "predict_flow",
    "save_checkpoint",
]
