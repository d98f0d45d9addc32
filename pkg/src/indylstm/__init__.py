"""Independently recurrent LSTMs with CTC training and cost benchmarking."""
from .cells import CellKind, CellParams, CellState, param_count, step, step_backward
from .ctc import corpus_cer, cer, ctc_loss, greedy_decode
from .network import Architecture, Model, model_backward, model_forward, model_param_count
from .numerics import Rng

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "CellKind",
    "CellParams",
    "CellState",
    "Model",
    "Rng",
    "cer",
    "corpus_cer",
    "ctc_loss",
    "greedy_decode",
    "model_backward",
    "model_forward",
    "model_param_count",
    "param_count",
    "step",
    "step_backward",
]
