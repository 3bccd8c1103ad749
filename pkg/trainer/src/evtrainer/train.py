"""Training loop: spec in, checkpoint plus loss curve out."""
from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import (
    FID,
    GPT_CONCAT,
    Example,
    encode_fid,
    encode_gpt,
    export_texts,
    load_export,
)
from .errors import TrainerError
from .models import (
    PRESETS,
    build_model,
    collate_fid,
    collate_gpt,
    fid_token_nll,
    gpt_token_nll,
)
from .vocab import Vocab

log = logging.getLogger("evtrainer")

CHECKPOINT_NAME = "checkpoint.pt"
LOG_NAME = "training_log.json"


@dataclass(frozen=True)
class TrainSpec:
    mode: str
    seed: int
    base: str = "tiny"
    max_input_len: int = 64
    epochs: int = 2
    batch_size: int = 16
    lr: float = 3e-4

    def __post_init__(self):
        if self.mode not in (GPT_CONCAT, FID):
            raise TrainerError(f"mode must be '{GPT_CONCAT}' or '{FID}', got {self.mode!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise TrainerError(f"seed must be an integer, got {self.seed!r}")
        if self.base not in PRESETS:
            raise TrainerError(f"unknown base model {self.base!r}; choose from {sorted(PRESETS)}")
        if self.max_input_len < 4:
            raise TrainerError(f"max_input_len must be >= 4, got {self.max_input_len}")
        if self.epochs < 1:
            raise TrainerError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainerError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise TrainerError(f"lr must be positive, got {self.lr}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    epoch_losses: list[float] = field(default_factory=list)
    n_examples: int = 0
    vocab_size: int = 0


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def encode_examples(examples: list[Example], vocab: Vocab, spec: TrainSpec) -> list:
    if spec.mode == GPT_CONCAT:
        return [encode_gpt(ex, vocab, spec.max_input_len) for ex in examples]
    return [encode_fid(ex, vocab, spec.max_input_len) for ex in examples]


def batch_nll(model, encoded_batch: list, vocab: Vocab, mode: str):
    """Summed target-token NLL and token count for one batch."""
    if mode == GPT_CONCAT:
        return gpt_token_nll(model, collate_gpt(encoded_batch, vocab.pad_id))
    return fid_token_nll(model, collate_fid(encoded_batch, vocab.pad_id))


def check_target_budget(examples: list[Example], vocab: Vocab, spec: TrainSpec) -> None:
    longest = max(len(vocab.encode(ex.target)) for ex in examples)
    # +2 leaves room for <bos>/<eos> framing around a non-empty input
    if spec.max_input_len < longest + 2:
        raise TrainerError(
            f"max_input_len {spec.max_input_len} cannot fit the longest target "
            f"({longest} tokens)"
        )


def train(spec: TrainSpec, export_path, out_dir) -> TrainResult:
    """Fit a fresh model on a formatted export and save a checkpoint."""
    examples = load_export(export_path, spec.mode)
    if not examples:
        raise TrainerError(f"{export_path}: export holds no examples")
    vocab = Vocab.build(export_texts(examples))
    check_target_budget(examples, vocab, spec)

    seed_everything(spec.seed)
    model = build_model(spec.mode, spec.base, vocab, spec.max_input_len)
    model.train()
    encoded = encode_examples(examples, vocab, spec)
    optimizer = torch.optim.AdamW(model.parameters(), lr=spec.lr)
    shuffler = random.Random(spec.seed)

    epoch_losses: list[float] = []
    for epoch in range(spec.epochs):
        order = list(range(len(encoded)))
        shuffler.shuffle(order)
        total_nll = 0.0
        total_tokens = 0
        for start in range(0, len(order), spec.batch_size):
            chunk = [encoded[i] for i in order[start : start + spec.batch_size]]
            loss_sum, n_tokens = batch_nll(model, chunk, vocab, spec.mode)
            loss = loss_sum / n_tokens
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_nll += float(loss_sum.detach())
            total_tokens += n_tokens
        epoch_losses.append(total_nll / total_tokens)
        log.info("epoch %d/%d: loss %.4f", epoch + 1, spec.epochs, epoch_losses[-1])

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / CHECKPOINT_NAME
    torch.save(
        {"spec": spec.to_dict(), "vocab": vocab.to_list(), "state_dict": model.state_dict()},
        checkpoint,
    )
    log_path = out_dir / LOG_NAME
    log_path.write_text(
        json.dumps(
            {
                "spec": spec.to_dict(),
                "epoch_losses": epoch_losses,
                "n_examples": len(examples),
                "vocab_size": len(vocab),
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return TrainResult(
        checkpoint=checkpoint,
        log_path=log_path,
        epoch_losses=epoch_losses,
        n_examples=len(examples),
        vocab_size=len(vocab),
    )


def load_checkpoint(path):
    """Rebuild (model, vocab, spec) from a saved checkpoint file."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise TrainerError(f"{path}: cannot load checkpoint: {exc}") from exc
    try:
        spec = TrainSpec(**payload["spec"])
        vocab = Vocab(payload["vocab"])
        state_dict = payload["state_dict"]
    except (KeyError, TypeError, ValueError) as exc:
        raise TrainerError(f"{path}: malformed checkpoint: {exc}") from exc
    model = build_model(spec.mode, spec.base, vocab, spec.max_input_len)
    model.load_state_dict(state_dict)
    model.eval()
    return model, vocab, spec
