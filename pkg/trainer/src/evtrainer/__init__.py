"""Toy trainer for evidence-augmented dialogue exports."""
from .data import FID, GPT_CONCAT, Example, load_export
from .errors import TrainerError
from .evaluate import decode, evaluate_ppl, write_hyps
from .train import TrainResult, TrainSpec, load_checkpoint, train
from .vocab import Vocab

__all__ = [
    "FID",
    "GPT_CONCAT",
    "Example",
    "TrainResult",
    "TrainSpec",
    "TrainerError",
    "Vocab",
    "decode",
    "evaluate_ppl",
    "load_checkpoint",
    "load_export",
    "train",
    "write_hyps",
]
