"""Graph neural relation predictor."""
from .gnn import ForwardTrace, forward, init_embeddings, loss, message_round, predict, run
from .params import ModelParams, expected_shapes

__all__ = [
    "ForwardTrace",
    "ModelParams",
    "expected_shapes",
    "forward",
    "init_embeddings",
    "loss",
    "message_round",
    "predict",
    "run",
]
