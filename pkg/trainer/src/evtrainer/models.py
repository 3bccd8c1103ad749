"""Tiny randomly initialized models and their token-level NLL.

Two architectures mirror the two export modes: a decoder-only model consumes
the single gpt_concat string, and an encoder-decoder model consumes fid
passages with fusion-style encoding (each passage encoded independently, the
hidden states concatenated along the sequence axis before the decoder).

Loss bookkeeping is shared: every forward returns the summed target-token
negative log-likelihood and the token count, so training batches and
perplexity evaluation use the exact same masking (-100 everywhere except
target tokens).
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from transformers import GPT2Config, GPT2LMHeadModel, T5Config, T5ForConditionalGeneration
from transformers.modeling_outputs import BaseModelOutput

from .data import FID, GPT_CONCAT
from .errors import TrainerError
from .vocab import Vocab

PRESETS = {
    "tiny": {"width": 64, "layers": 2, "heads": 2, "ff": 128},
    "small": {"width": 128, "layers": 3, "heads": 4, "ff": 256},
}


def build_model(mode: str, base: str, vocab: Vocab, max_input_len: int):
    preset = PRESETS.get(base)
    if preset is None:
        raise TrainerError(f"unknown base model {base!r}; choose from {sorted(PRESETS)}")
    if mode == GPT_CONCAT:
        config = GPT2Config(
            vocab_size=len(vocab),
            n_positions=max_input_len,
            n_embd=preset["width"],
            n_layer=preset["layers"],
            n_head=preset["heads"],
            bos_token_id=vocab.bos_id,
            eos_token_id=vocab.eos_id,
            pad_token_id=vocab.pad_id,
        )
        return GPT2LMHeadModel(config)
    if mode == FID:
        config = T5Config(
            vocab_size=len(vocab),
            d_model=preset["width"],
            num_layers=preset["layers"],
            num_decoder_layers=preset["layers"],
            num_heads=preset["heads"],
            d_ff=preset["ff"],
            d_kv=preset["width"] // preset["heads"],
            pad_token_id=vocab.pad_id,
            eos_token_id=vocab.eos_id,
            decoder_start_token_id=vocab.pad_id,
        )
        return T5ForConditionalGeneration(config)
    raise TrainerError(f"unknown mode {mode!r}")


def collate_gpt(encoded: list[tuple[list[int], list[int]]], pad_id: int) -> dict:
    width = max(len(ids) for ids, _ in encoded)
    input_ids = torch.full((len(encoded), width), pad_id, dtype=torch.long)
    attention = torch.zeros((len(encoded), width), dtype=torch.long)
    labels = torch.full((len(encoded), width), -100, dtype=torch.long)
    for row, (ids, labs) in enumerate(encoded):
        input_ids[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        attention[row, : len(ids)] = 1
        labels[row, : len(labs)] = torch.tensor(labs, dtype=torch.long)
    return {"input_ids": input_ids, "attention_mask": attention, "labels": labels}


def collate_fid(encoded: list[tuple[list[list[int]], list[int]]], pad_id: int) -> dict:
    n_passages = max(len(passages) for passages, _ in encoded)
    passage_len = max(len(p) for passages, _ in encoded for p in passages)
    target_len = max(len(target) for _, target in encoded)
    batch = len(encoded)
    input_ids = torch.full((batch, n_passages, passage_len), pad_id, dtype=torch.long)
    attention = torch.zeros((batch, n_passages, passage_len), dtype=torch.long)
    labels = torch.full((batch, target_len), -100, dtype=torch.long)
    for row, (passages, target) in enumerate(encoded):
        for slot, ids in enumerate(passages):
            input_ids[row, slot, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            attention[row, slot, : len(ids)] = 1
        labels[row, : len(target)] = torch.tensor(target, dtype=torch.long)
    return {"input_ids": input_ids, "attention_mask": attention, "labels": labels}


def fuse_passages(model, input_ids: torch.Tensor, attention_mask: torch.Tensor):
    """Encode (batch, passages, len) separately, concatenate per example."""
    batch, n_passages, passage_len = input_ids.shape
    flat_ids = input_ids.view(batch * n_passages, passage_len)
    flat_mask = attention_mask.view(batch * n_passages, passage_len)
    hidden = model.encoder(input_ids=flat_ids, attention_mask=flat_mask).last_hidden_state
    fused = hidden.view(batch, n_passages * passage_len, hidden.shape[-1])
    fused_mask = attention_mask.view(batch, n_passages * passage_len)
    return BaseModelOutput(last_hidden_state=fused), fused_mask


def _nll_sum(logits: torch.Tensor, labels: torch.Tensor) -> tuple[torch.Tensor, int]:
    loss_sum = F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        labels.reshape(-1),
        ignore_index=-100,
        reduction="sum",
    )
    return loss_sum, int((labels != -100).sum())


def gpt_token_nll(model, batch: dict) -> tuple[torch.Tensor, int]:
    """Summed NLL over target tokens plus the token count, shifted causally."""
    out = model(input_ids=batch["input_ids"], attention_mask=batch["attention_mask"])
    return _nll_sum(out.logits[:, :-1], batch["labels"][:, 1:])


def fid_token_nll(model, batch: dict) -> tuple[torch.Tensor, int]:
    encoder_outputs, fused_mask = fuse_passages(
        model, batch["input_ids"], batch["attention_mask"]
    )
    out = model(
        encoder_outputs=encoder_outputs,
        attention_mask=fused_mask,
        labels=batch["labels"],
    )
    return _nll_sum(out.logits, batch["labels"])


def contributing_positions(batch: dict) -> torch.Tensor:
    """Boolean mask of exactly the positions the loss is computed over."""
    return batch["labels"] != -100
