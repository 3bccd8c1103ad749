"""Perplexity and greedy decoding over a formatted export.

Perplexity is exp(mean per-token negative log-likelihood) over target tokens
only, using the same label masking as training. Decoding is greedy, so a
fixed checkpoint always yields the same hypotheses.
"""
from __future__ import annotations

import json
import math

import torch

from .data import GPT_CONCAT, encode_fid, encode_gpt, load_export
from .models import collate_fid, collate_gpt, fid_token_nll, fuse_passages, gpt_token_nll
from .train import TrainSpec, encode_examples, load_checkpoint
from .vocab import Vocab

DEFAULT_MAX_NEW_TOKENS = 24


def evaluate_ppl(checkpoint_path, export_path, batch_size: int = 32) -> float:
    """exp(mean target-token NLL) of the checkpoint on an export file."""
    model, vocab, spec = load_checkpoint(checkpoint_path)
    examples = load_export(export_path, spec.mode)
    encoded = encode_examples(examples, vocab, spec)
    total_nll = 0.0
    total_tokens = 0
    with torch.no_grad():
        for start in range(0, len(encoded), batch_size):
            chunk = encoded[start : start + batch_size]
            if spec.mode == GPT_CONCAT:
                loss_sum, n_tokens = gpt_token_nll(model, collate_gpt(chunk, vocab.pad_id))
            else:
                loss_sum, n_tokens = fid_token_nll(model, collate_fid(chunk, vocab.pad_id))
            total_nll += float(loss_sum)
            total_tokens += n_tokens
    return math.exp(total_nll / total_tokens)


def _decode_gpt(model, vocab: Vocab, spec: TrainSpec, ex, max_new_tokens: int) -> str:
    # the prompt is the example input alone; the target budget is reserved so
    # generation has room inside the position window
    ids, labels = encode_gpt(ex, vocab, spec.max_input_len)
    prompt_len = sum(1 for lab in labels if lab == -100)
    prompt = torch.tensor([ids[:prompt_len]], dtype=torch.long)
    budget = min(max_new_tokens, spec.max_input_len - prompt.shape[1])
    out = model.generate(
        input_ids=prompt,
        attention_mask=torch.ones_like(prompt),
        do_sample=False,
        max_new_tokens=max(budget, 1),
        eos_token_id=vocab.eos_id,
        pad_token_id=vocab.pad_id,
    )
    return vocab.decode(out[0][prompt.shape[1]:].tolist())


def _decode_fid(model, vocab: Vocab, spec: TrainSpec, ex, max_new_tokens: int) -> str:
    passages, _ = encode_fid(ex, vocab, spec.max_input_len)
    batch = collate_fid([(passages, [vocab.eos_id])], vocab.pad_id)
    encoder_outputs, fused_mask = fuse_passages(model, batch["input_ids"], batch["attention_mask"])
    out = model.generate(
        encoder_outputs=encoder_outputs,
        attention_mask=fused_mask,
        do_sample=False,
        max_new_tokens=max_new_tokens,
        eos_token_id=vocab.eos_id,
        pad_token_id=vocab.pad_id,
    )
    return vocab.decode(out[0].tolist())


def decode(checkpoint_path, export_path, max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS) -> list[dict]:
    """Greedy hypotheses as {"id", "hyp"} records, one per export example."""
    model, vocab, spec = load_checkpoint(checkpoint_path)
    examples = load_export(export_path, spec.mode)
    hyps = []
    with torch.no_grad():
        for ex in examples:
            if spec.mode == GPT_CONCAT:
                text = _decode_gpt(model, vocab, spec, ex, max_new_tokens)
            else:
                text = _decode_fid(model, vocab, spec, ex, max_new_tokens)
            hyps.append({"id": ex.id, "hyp": text})
    return hyps


def write_hyps(hyps: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for hyp in hyps:
            fh.write(json.dumps(hyp, ensure_ascii=False) + "\n")
