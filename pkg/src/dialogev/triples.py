"""Context-evidence-response triples and the generation-ready export formats.

A TripleRecord pairs one dialogue instance with its (post-filter) evidence
list. Two serializations exist:

* the triple file, JSONL records
  ``{"id", "split", "context": [...], "response": str,
     "evidences": [{"source_id", "text", "f"}]}``
  which round-trips losslessly through :func:`read_triples` /
  :func:`write_triples`;
* the formatted export, JSONL records ``{"id", "mode", "input", "target"}``
  consumed by downstream trainers, in one of two modes:

  - ``gpt_concat``: one input string
    ``[p] e_1 [p] e_2 ... [speaker1] u_1 [speaker2] u_2 ...``
  - ``fid``: one input list with a ``[p] e_j <tagged context>`` passage per
    evidence plus a final context-only passage (always |evidences| + 1).

Evidence text appears on the input side only; the target is always the
instance's own response.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .corpus import Corpus, DialogueInstance, Utterance, atomic_write_text, dump_jsonl_line
from .errors import IngestError
from .retrieval import (
    Evidence,
    MatchScore,
    RetrievalConfig,
    RetrievalSet,
    apply_filter,
    retrieve_all,
)

GPT_CONCAT = "gpt_concat"
FID = "fid"
EVIDENCE_MARKER = "[p]"


@dataclass
class TripleRecord:
    instance: DialogueInstance
    evidences: list[Evidence]
    split_tag: str


@dataclass
class FormattedExample:
    id: str
    mode: str
    input: str | list[str]
    target: str


def build_triples(
    split: Corpus,
    rset: RetrievalSet,
    cfg: RetrievalConfig,
    seed: int | None = None,
    split_tag: str | None = None,
    workers: int = 1,
    raw_sink: Callable[[DialogueInstance, list[Evidence]], None] | None = None,
) -> list[TripleRecord]:
    """One TripleRecord per instance, in split order.

    Evidence lists are the filtered retrieval output. ``raw_sink``, when
    given, receives each instance's pre-filter evidence list (useful for
    evidence dumps).
    """
    tag = split_tag if split_tag is not None else (split.name or "train")
    evidence_lists = retrieve_all(split.instances, rset, cfg, seed=seed, workers=workers)
    records = []
    for inst, evidences in zip(split.instances, evidence_lists):
        if raw_sink is not None:
            raw_sink(inst, evidences)
        records.append(
            TripleRecord(
                instance=inst,
                evidences=apply_filter(evidences, cfg.filter_threshold),
                split_tag=tag,
            )
        )
    return records


def speaker_tagged_context(instance: DialogueInstance) -> str:
    """Context rendered as ``[speaker1] u_1 [speaker2] u_2 ...``."""
    return " ".join(f"[speaker{u.speaker}] {u.text}" for u in instance.context)


def format_gpt(rec: TripleRecord) -> FormattedExample:
    parts = [f"{EVIDENCE_MARKER} {ev.text}" for ev in rec.evidences]
    parts.append(speaker_tagged_context(rec.instance))
    return FormattedExample(
        id=rec.instance.id,
        mode=GPT_CONCAT,
        input=" ".join(parts),
        target=rec.instance.response.text,
    )


def format_fid(rec: TripleRecord) -> FormattedExample:
    context = speaker_tagged_context(rec.instance)
    passages = [f"{EVIDENCE_MARKER} {ev.text} {context}" for ev in rec.evidences]
    passages.append(context)
    return FormattedExample(
        id=rec.instance.id, mode=FID, input=passages, target=rec.instance.response.text
    )


_FORMATTERS = {GPT_CONCAT: format_gpt, FID: format_fid}


def format_records(records: Sequence[TripleRecord], mode: str) -> list[FormattedExample]:
    formatter = _FORMATTERS.get(mode)
    if formatter is None:
        raise ValueError(f"unknown format mode {mode!r} (use {sorted(_FORMATTERS)})")
    return [formatter(rec) for rec in records]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def triple_to_dict(rec: TripleRecord) -> dict:
    return {
        "id": rec.instance.id,
        "split": rec.split_tag,
        "context": [{"speaker": u.speaker, "text": u.text} for u in rec.instance.context],
        "response": rec.instance.response.text,
        "evidences": [
            {"source_id": ev.source_id, "text": ev.text, "f": ev.score.f}
            for ev in rec.evidences
        ],
    }


def triple_from_dict(obj: dict) -> TripleRecord:
    context = [Utterance(u["speaker"], u["text"]) for u in obj["context"]]
    response = Utterance(3 - context[-1].speaker, obj["response"])
    instance = DialogueInstance(id=obj["id"], context=context, response=response)
    evidences = [
        Evidence(
            source_id=ev["source_id"],
            text=ev["text"],
            score=MatchScore.scalar(ev["f"]),
            strategy=None,
            rank=position + 1,
        )
        for position, ev in enumerate(obj["evidences"])
    ]
    return TripleRecord(instance=instance, evidences=evidences, split_tag=obj["split"])


def triples_to_text(records: Sequence[TripleRecord]) -> str:
    return "".join(dump_jsonl_line(triple_to_dict(rec)) for rec in records)


def write_triples(records: Sequence[TripleRecord], path) -> None:
    atomic_write_text(path, triples_to_text(records))


def read_triples(path) -> list[TripleRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(triple_from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                raise IngestError(f"{path}:{lineno}: invalid triple record: {exc}") from exc
    return records


def formatted_to_text(examples: Sequence[FormattedExample]) -> str:
    return "".join(
        dump_jsonl_line(
            {"id": ex.id, "mode": ex.mode, "input": ex.input, "target": ex.target}
        )
        for ex in examples
    )


def write_formatted(examples: Sequence[FormattedExample], path) -> None:
    atomic_write_text(path, formatted_to_text(examples))
