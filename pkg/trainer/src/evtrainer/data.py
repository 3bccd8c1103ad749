"""Formatted-export loading, length budgeting, and id encoding.

The input contract is the retrieval pipeline's formatted export: JSONL rows
{"id", "mode", "input", "target"} where ``input`` is one concatenated string
in gpt_concat mode and a list of passage strings in fid mode.

When an example exceeds the length budget, whole evidences go first, lowest
rank first (the trailing ``[p]`` segment in gpt_concat, the trailing evidence
passage's evidence tokens in fid), and context tokens are dropped from the
oldest end only after no evidence is left. Every truncation is logged.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

from .errors import TrainerError
from .vocab import MARKERS, Vocab, split_tokens

GPT_CONCAT = "gpt_concat"
FID = "fid"

PASSAGE_MARKER = MARKERS[0]
SPEAKER_MARKERS = MARKERS[1:]

log = logging.getLogger("evtrainer")


@dataclass(frozen=True)
class Example:
    id: str
    mode: str
    input: str | list[str]
    target: str


def load_export(path, expected_mode: str) -> list[Example]:
    """Read a formatted-export JSONL file, enforcing one mode throughout."""
    if expected_mode not in (GPT_CONCAT, FID):
        raise TrainerError(f"unknown mode {expected_mode!r}")
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ex = Example(
                    id=str(obj["id"]),
                    mode=str(obj["mode"]),
                    input=obj["input"],
                    target=str(obj["target"]),
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise TrainerError(f"{path}:{lineno}: invalid export record: {exc}") from exc
            if ex.mode != expected_mode:
                raise TrainerError(
                    f"{path}:{lineno}: example mode {ex.mode!r} does not match {expected_mode!r}"
                )
            if expected_mode == GPT_CONCAT and not isinstance(ex.input, str):
                raise TrainerError(f"{path}:{lineno}: gpt_concat input must be a string")
            if expected_mode == FID and not (
                isinstance(ex.input, list) and all(isinstance(p, str) for p in ex.input)
            ):
                raise TrainerError(f"{path}:{lineno}: fid input must be a list of strings")
            examples.append(ex)
    return examples


def _split_evidence_context(tokens: list[str]) -> tuple[list[list[str]], list[str]]:
    """Break a token stream into [p]-delimited evidence segments and the rest."""
    boundary = len(tokens)
    for i, token in enumerate(tokens):
        if token in SPEAKER_MARKERS:
            boundary = i
            break
    segments: list[list[str]] = []
    for token in tokens[:boundary]:
        if token == PASSAGE_MARKER:
            segments.append([token])
        elif segments:
            segments[-1].append(token)
        else:
            # tolerate evidence text before any marker
            segments.append([token])
    return segments, tokens[boundary:]


def fit_gpt_input(tokens: list[str], budget: int, example_id: str) -> list[str]:
    """Shrink a gpt_concat input to the budget: evidences first, context last."""
    if budget < 0:
        budget = 0
    segments, context = _split_evidence_context(tokens)
    while segments and sum(len(s) for s in segments) + len(context) > budget:
        dropped = segments.pop()
        log.info("truncate %s: dropped lowest-rank evidence (%d tokens)", example_id, len(dropped))
    remaining = [token for segment in segments for token in segment] + context
    if len(remaining) > budget:
        cut = len(remaining) - budget
        log.info("truncate %s: dropped %d leading context tokens", example_id, cut)
        remaining = remaining[cut:]
    return remaining


def fit_fid_passage(tokens: list[str], budget: int, example_id: str) -> list[str]:
    """Shrink one fid passage: its evidence tokens first, context last."""
    if len(tokens) <= budget:
        return tokens
    segments, context = _split_evidence_context(tokens)
    evidence = [token for segment in segments for token in segment]
    overflow = len(evidence) + len(context) - budget
    if evidence and overflow > 0:
        cut = min(overflow, len(evidence))
        log.info("truncate %s: dropped %d evidence tokens from a passage", example_id, cut)
        evidence = evidence[: len(evidence) - cut]
        overflow -= cut
    if overflow > 0:
        log.info("truncate %s: dropped %d leading context tokens", example_id, overflow)
        context = context[overflow:]
    return evidence + context


def encode_gpt(ex: Example, vocab: Vocab, max_len: int) -> tuple[list[int], list[int]]:
    """One decoder-only sequence: <bos> input target <eos>.

    Labels are -100 everywhere except the target tokens and the closing
    <eos>, so the input (evidence included) never contributes to the loss.
    """
    target_ids = vocab.encode(ex.target) + [vocab.eos_id]
    budget = max_len - len(target_ids) - 1  # <bos>
    input_tokens = fit_gpt_input(split_tokens(ex.input), budget, ex.id)
    input_ids = [vocab.bos_id] + vocab.encode_tokens(input_tokens)
    ids = input_ids + target_ids
    labels = [-100] * len(input_ids) + target_ids
    return ids, labels


def encode_fid(ex: Example, vocab: Vocab, max_len: int) -> tuple[list[list[int]], list[int]]:
    """Per-passage encoder ids plus decoder target ids ending in <eos>."""
    passages = [
        vocab.encode_tokens(fit_fid_passage(split_tokens(p), max_len, ex.id))
        for p in ex.input
    ]
    passages = [p if p else [vocab.pad_id] for p in passages]
    target_ids = vocab.encode(ex.target) + [vocab.eos_id]
    return passages, target_ids


def export_texts(examples) -> list[str]:
    """Every text field, for vocabulary building."""
    texts = []
    for ex in examples:
        if isinstance(ex.input, str):
            texts.append(ex.input)
        else:
            texts.extend(ex.input)
        texts.append(ex.target)
    return texts
