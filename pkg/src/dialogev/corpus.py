"""Dialogue corpus model: ingest, preprocessing limits, deterministic splits.

A corpus is an ordered list of (context, response) instances. Raw reply-tree
data (Reddit-style comment chains) is flattened so that every root-to-node
path of length >= 2 becomes one instance: the path prefix is the context,
the final node the response. Speaker roles alternate by tree depth (even
depth = speaker 1).

The on-disk form is JSONL, one instance per line:

    {"id": str, "source": str,
     "context": [{"speaker": 1|2, "text": str}, ...],
     "response": {"speaker": 1|2, "text": str}}

UTF-8, newline-delimited, no BOM. Line order is the corpus order and is
stable across load/save round-trips.
"""
from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import ConfigError, IngestError
from .scoring import tokenize

DEFAULT_MAX_TURNS = 8
DEFAULT_MAX_TOKENS_PER_UTTERANCE = 128


@dataclass
class Utterance:
    speaker: int
    text: str
    _tokens: list[str] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.speaker not in (1, 2):
            raise ValueError(f"speaker must be 1 or 2, got {self.speaker!r}")
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("utterance text must be a non-empty string")

    @property
    def tokens(self) -> list[str]:
        if self._tokens is None:
            self._tokens = tokenize(self.text)
        return self._tokens


@dataclass
class DialogueInstance:
    id: str
    context: list[Utterance]
    response: Utterance
    source_tag: str = ""

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("instance id must be a non-empty string")
        if not self.context:
            raise ValueError(f"instance {self.id}: context is empty")
        for prev, cur in zip(self.context, self.context[1:]):
            if cur.speaker == prev.speaker:
                raise ValueError(f"instance {self.id}: context speakers do not alternate")
        if self.response.speaker == self.context[-1].speaker:
            raise ValueError(
                f"instance {self.id}: response speaker repeats the last context speaker"
            )

    @property
    def latest_utterance(self) -> Utterance:
        return self.context[-1]


class Corpus:
    """Ordered, immutable-by-convention list of instances with unique ids."""

    def __init__(self, instances: Iterable[DialogueInstance], name: str = ""):
        self.instances = list(instances)
        self.name = name
        seen: set[str] = set()
        for inst in self.instances:
            if inst.id in seen:
                raise ValueError(f"duplicate instance id {inst.id!r}")
            seen.add(inst.id)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[DialogueInstance]:
        return iter(self.instances)

    def __getitem__(self, idx: int) -> DialogueInstance:
        return self.instances[idx]

    def ids(self) -> list[str]:
        return [inst.id for inst in self.instances]


@dataclass(frozen=True)
class PreprocessLimits:
    max_turns: int = DEFAULT_MAX_TURNS
    max_tokens_per_utterance: int = DEFAULT_MAX_TOKENS_PER_UTTERANCE

    def __post_init__(self):
        if self.max_turns < 1 or self.max_tokens_per_utterance < 1:
            raise ConfigError(
                "preprocess limits must be strictly positive, got "
                f"max_turns={self.max_turns}, "
                f"max_tokens_per_utterance={self.max_tokens_per_utterance}"
            )

    def to_dict(self) -> dict:
        return {
            "max_turns": self.max_turns,
            "max_tokens_per_utterance": self.max_tokens_per_utterance,
        }


@dataclass
class IngestReport:
    read: int = 0
    emitted: int = 0
    skipped_malformed: int = 0
    discarded_by_limits: int = 0
    limits: PreprocessLimits = field(default_factory=PreprocessLimits)

    def to_dict(self) -> dict:
        return {
            "read": self.read,
            "emitted": self.emitted,
            "skipped_malformed": self.skipped_malformed,
            "discarded_by_limits": self.discarded_by_limits,
            "limits": self.limits.to_dict(),
        }


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    train_size: int = 100_000
    dev_size: int = 10_000
    test_size: int = 10_000
    extra_pool_sizes: tuple[int, ...] = ()

    def __post_init__(self):
        sizes = (self.train_size, self.dev_size, self.test_size, *self.extra_pool_sizes)
        if any(s < 0 for s in sizes):
            raise ConfigError(f"split sizes must be non-negative, got {sizes}")


@dataclass
class SplitResult:
    train: Corpus
    dev: Corpus
    test: Corpus
    extra_pools: list[Corpus]


class _Node:
    __slots__ = ("parent", "depth", "utterance", "token_count", "chain_within_limit")

    def __init__(self, parent, depth, utterance, token_count, chain_within_limit):
        self.parent = parent
        self.depth = depth
        self.utterance = utterance
        self.token_count = token_count
        self.chain_within_limit = chain_within_limit


def ingest_reddit_chains(
    raw_records: Iterable[Mapping],
    limits: PreprocessLimits | None = None,
    source_tag: str = "reddit",
) -> tuple[Corpus, IngestReport]:
    """Flatten a stream of reply-tree records into dialogue instances.

    Each record is a mapping with keys ``id`` (non-empty string), ``parent``
    (null for roots, else the id of an earlier record) and ``text``. Any
    further keys (e.g. author) are ignored; speaker roles come from depth
    parity. Malformed records (missing/duplicate id, empty text, dangling
    parent) are skipped and counted; instances whose context exceeds
    ``max_turns`` or containing an utterance longer than
    ``max_tokens_per_utterance`` tokens are counted as discarded by limits.
    A record that is not a JSON object aborts the ingest.
    """
    limits = limits or PreprocessLimits()
    report = IngestReport(limits=limits)
    nodes: dict[str, _Node] = {}
    instances: list[DialogueInstance] = []

    for record in raw_records:
        report.read += 1
        if not isinstance(record, Mapping):
            raise IngestError(
                f"record {report.read} is not an object: {type(record).__name__}"
            )
        rec_id = record.get("id")
        text = record.get("text")
        parent_id = record.get("parent")
        if (
            not isinstance(rec_id, str)
            or not rec_id
            or rec_id in nodes
            or not isinstance(text, str)
            or not text.strip()
            or not (parent_id is None or parent_id in nodes)
        ):
            report.skipped_malformed += 1
            continue

        parent = nodes[parent_id] if parent_id is not None else None
        depth = parent.depth + 1 if parent else 0
        utterance = Utterance(speaker=1 if depth % 2 == 0 else 2, text=text.strip())
        token_count = len(utterance.tokens)
        within = token_count <= limits.max_tokens_per_utterance and (
            parent.chain_within_limit if parent else True
        )
        node = _Node(parent, depth, utterance, token_count, within)
        nodes[rec_id] = node

        if parent is None:
            continue
        # Context = utterances from the root down to the parent (depth of them).
        if depth > limits.max_turns or not within:
            report.discarded_by_limits += 1
            continue
        context: list[Utterance] = []
        walk = parent
        while walk is not None:
            context.append(walk.utterance)
            walk = walk.parent
        context.reverse()
        instances.append(
            DialogueInstance(
                id=rec_id, context=context, response=utterance, source_tag=source_tag
            )
        )
        report.emitted += 1

    return Corpus(instances, name=source_tag), report


def preprocess(corpus: Corpus, limits: PreprocessLimits) -> Corpus:
    """Keep only instances within the turn and utterance-length limits."""
    kept = []
    for inst in corpus:
        if len(inst.context) > limits.max_turns:
            continue
        utterances = [*inst.context, inst.response]
        if any(len(u.tokens) > limits.max_tokens_per_utterance for u in utterances):
            continue
        kept.append(inst)
    return Corpus(kept, name=corpus.name)


def split(corpus: Corpus, spec: SplitSpec) -> SplitResult:
    """Disjoint seeded splits in shuffle-draw order.

    Instance ids are shuffled with ``random.Random(seed)`` and consumed in
    order: train, dev, test, then each extra pool. Identical (corpus, spec)
    inputs always produce identical splits.
    """
    total = spec.train_size + spec.dev_size + spec.test_size + sum(spec.extra_pool_sizes)
    if total > len(corpus):
        raise ConfigError(
            f"split needs {total} instances but corpus "
            f"{corpus.name or '<unnamed>'} has {len(corpus)} "
            f"(short by {total - len(corpus)})"
        )
    ids = corpus.ids()
    random.Random(spec.seed).shuffle(ids)
    by_id = {inst.id: inst for inst in corpus}

    cursor = 0

    def take(count: int, name: str) -> Corpus:
        nonlocal cursor
        chunk = ids[cursor : cursor + count]
        cursor += count
        return Corpus([by_id[i] for i in chunk], name=name)

    train = take(spec.train_size, "train")
    dev = take(spec.dev_size, "dev")
    test = take(spec.test_size, "test")
    extras = [
        take(size, f"extra{i}") for i, size in enumerate(spec.extra_pool_sizes)
    ]
    return SplitResult(train=train, dev=dev, test=test, extra_pools=extras)


# ---------------------------------------------------------------------------
# JSONL persistence
# ---------------------------------------------------------------------------

def _instance_to_dict(inst: DialogueInstance) -> dict:
    return {
        "id": inst.id,
        "source": inst.source_tag,
        "context": [{"speaker": u.speaker, "text": u.text} for u in inst.context],
        "response": {"speaker": inst.response.speaker, "text": inst.response.text},
    }


def _instance_from_dict(obj: Mapping) -> DialogueInstance:
    context = [Utterance(u["speaker"], u["text"]) for u in obj["context"]]
    response = Utterance(obj["response"]["speaker"], obj["response"]["text"])
    return DialogueInstance(
        id=obj["id"], context=context, response=response, source_tag=obj.get("source", "")
    )


def dump_jsonl_line(obj) -> str:
    """Canonical JSONL encoding used for every artifact this package writes."""
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"


def atomic_write_text(path, text: str) -> None:
    """Write a file via a temp sibling + rename so readers never see a stub."""
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp.{os.getpid()}")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def save_corpus(corpus: Corpus, path) -> None:
    atomic_write_text(
        path, "".join(dump_jsonl_line(_instance_to_dict(inst)) for inst in corpus)
    )


def load_corpus(path, name: str | None = None) -> Corpus:
    path = Path(path)
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                instances.append(_instance_from_dict(obj))
            except (ValueError, KeyError, TypeError) as exc:
                raise IngestError(f"{path}:{lineno}: invalid corpus record: {exc}") from exc
    return Corpus(instances, name=name if name is not None else path.stem)


def merge_corpora(parts: Iterable[Corpus], name: str) -> Corpus:
    """Concatenate corpora; duplicate ids across parts raise ValueError."""
    instances: list[DialogueInstance] = []
    for part in parts:
        instances.extend(part.instances)
    return Corpus(instances, name=name)
