"""Leave-one-out evidence retrieval over a dialogue corpus.

The retrieval set is built from the training corpus (optionally extended
with extra pools). Each member contributes two scorable sides: its context
(represented by its latest utterance by default, or the whole context
joined with spaces) and its response. A query is always represented by the
latest utterance of its context.

Strategies:

* ``c2c``  - query context vs member contexts; evidences are the responses
  of the best-matching members.
* ``c2r``  - query context vs member responses directly.
* ``mix``  - union of the c2c and c2r top-k, deduplicated per source id
  keeping the higher score, re-ranked, truncated to k.
* ``random`` - seeded uniform draw without replacement (ablation baseline),
  scored against the response side for reporting.

Execution is two-stage by default: a BM25 pre-fetch picks ``prefetch_m``
candidates per side, which the configured scorer then re-ranks. With
``exact_mode`` every member is scored, which small-scale tests use as the
ground truth; ``prefetch_m >= |set|`` makes the two plans identical. The
query's own id is excluded everywhere (leave-one-out). All orderings break
score ties by ascending source id, so outputs are fully deterministic.
"""
from __future__ import annotations

import hashlib
import json
import multiprocessing
import random
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import Corpus, DialogueInstance, merge_corpora
from .embedding import decode_embedding_table, encode_embedding_table, quantize_unit
from .errors import ConfigError, RetrievalError
from .scoring import Bm25Index, MatchScore, bertscore, bm25_build, tokenize


class Strategy(str, Enum):
    C2C = "c2c"
    C2R = "c2r"
    MIX = "mix"
    RANDOM = "random"


class ScorerKind(str, Enum):
    BERTSCORE = "bertscore"
    BM25 = "bm25"


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 8
    strategy: Strategy = Strategy.MIX
    filter_threshold: float | None = None
    prefetch_m: int = 100
    exact_mode: bool = False
    scorer: ScorerKind = ScorerKind.BERTSCORE
    use_idf: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.prefetch_m < 1:
            raise ConfigError(f"prefetch_m must be >= 1, got {self.prefetch_m}")
        if not self.exact_mode and self.k > self.prefetch_m:
            raise ConfigError(
                f"k={self.k} exceeds prefetch_m={self.prefetch_m}; "
                "raise prefetch_m or enable exact_mode"
            )
        if self.filter_threshold is not None:
            tau = self.filter_threshold
            if not np.isfinite(tau):
                raise ConfigError(f"filter threshold must be finite, got {tau}")
            if self.scorer == ScorerKind.BERTSCORE and not -1.0 <= tau <= 1.0:
                raise ConfigError(
                    f"filter threshold {tau} outside the bertscore range [-1, 1]"
                )
            if self.scorer == ScorerKind.BM25 and tau < 0.0:
                raise ConfigError(f"filter threshold {tau} is negative; BM25 scores are not")


@dataclass(frozen=True)
class Evidence:
    source_id: str
    text: str
    score: MatchScore
    strategy: Strategy | None
    rank: int


_CTX = "ctx"
_RSP = "rsp"


class RetrievalSet:
    """Immutable retrieval structures over the member corpus.

    Holds, per member and per side, the token list, the BM25 index entry and
    the embedding matrix. Instances are built by :func:`build_retrieval_set`;
    after that the object is read-only and safe to share across workers.
    """

    def __init__(
        self,
        members: Corpus,
        backend,
        context_side: str,
        ctx_tokens: list[list[str]],
        rsp_tokens: list[list[str]],
        ctx_embeddings: list[np.ndarray] | None,
        rsp_embeddings: list[np.ndarray] | None,
    ):
        self.members = members
        self.backend = backend
        self.context_side = context_side
        self._tokens = {_CTX: ctx_tokens, _RSP: rsp_tokens}
        self._embeddings = {_CTX: ctx_embeddings, _RSP: rsp_embeddings}
        self._indices = {
            _CTX: bm25_build(zip(members.ids(), ctx_tokens)),
            _RSP: bm25_build(zip(members.ids(), rsp_tokens)),
        }
        self.ids = members.ids()
        self._index_of = {inst_id: i for i, inst_id in enumerate(self.ids)}
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        for rank, idx in enumerate(order):
            self._id_rank[idx] = rank
        self._idf_tables: dict[str, dict[str, float]] = {}

    def __len__(self) -> int:
        return len(self.members)

    def index_of(self, instance_id: str) -> int | None:
        return self._index_of.get(instance_id)

    def side_tokens(self, side: str) -> list[list[str]]:
        return self._tokens[side]

    def side_index(self, side: str) -> Bm25Index:
        return self._indices[side]

    def side_embeddings(self, side: str) -> list[np.ndarray]:
        embeddings = self._embeddings[side]
        if embeddings is None:
            raise RetrievalError("retrieval set was built without embeddings")
        return embeddings

    def idf_table(self, side: str) -> dict[str, float]:
        table = self._idf_tables.get(side)
        if table is None:
            table = self._indices[side].idf_table()
            self._idf_tables[side] = table
        return table

    def query_repr(
        self, query: DialogueInstance, need_embedding: bool
    ) -> tuple[list[str], np.ndarray | None]:
        """Token list (and embedding matrix) for a query's latest utterance.

        When the query is itself a member and the member context side is the
        latest utterance, the cached member representation is reused.
        """
        idx = self._index_of.get(query.id)
        if idx is not None and self.context_side == "latest":
            tokens = self._tokens[_CTX][idx]
            if not need_embedding:
                return tokens, None
            embeddings = self._embeddings[_CTX]
            if embeddings is not None:
                return tokens, embeddings[idx]
        tokens = tokenize(query.latest_utterance.text)
        if not need_embedding:
            return tokens, None
        if self.backend is None:
            raise RetrievalError("retrieval set has no embedding backend configured")
        return tokens, self.backend.embed(tokens)


def member_context_text(inst: DialogueInstance, context_side: str) -> str:
    """The member-side context representation that gets indexed and embedded."""
    if context_side == "latest":
        return inst.latest_utterance.text
    if context_side == "full":
        return " ".join(u.text for u in inst.context)
    raise ConfigError(f"unknown context side {context_side!r} (use 'latest' or 'full')")


def _cache_file_stem(instance_id: str) -> str:
    safe = re.sub(r"[^A-Za-z0-9_.-]", "_", instance_id)[:40]
    return f"{safe}-{hashlib.sha256(instance_id.encode('utf-8')).hexdigest()[:12]}"


def _members_digest(members: Corpus, context_side: str) -> str:
    digest = hashlib.sha256()
    for inst in members:
        digest.update(inst.id.encode("utf-8"))
        digest.update(b"\0")
        digest.update(member_context_text(inst, context_side).encode("utf-8"))
        digest.update(b"\0")
        digest.update(inst.response.text.encode("utf-8"))
        digest.update(b"\0")
    return digest.hexdigest()


def _load_embedding_cache(
    cache_dir: Path,
    members: Corpus,
    backend,
    context_side: str,
    ctx_tokens: list[list[str]],
    rsp_tokens: list[list[str]],
) -> tuple[list[np.ndarray], list[np.ndarray]] | None:
    manifest_path = cache_dir / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None
    expected = {
        "backend_id": backend.backend_id,
        "dim": backend.dim,
        "count": len(members),
        "context_side": context_side,
        "members_digest": _members_digest(members, context_side),
    }
    if any(manifest.get(key) != value for key, value in expected.items()):
        return None

    digest = hashlib.sha256()
    ctx_embeddings: list[np.ndarray] = []
    rsp_embeddings: list[np.ndarray] = []
    for inst, expected_ctx, expected_rsp in zip(members, ctx_tokens, rsp_tokens):
        stem = _cache_file_stem(inst.id)
        matrices = []
        for suffix, expected_tokens in ((".ctx.evt", expected_ctx), (".rsp.evt", expected_rsp)):
            path = cache_dir / "vectors" / (stem + suffix)
            try:
                data = path.read_bytes()
                dim, records = decode_embedding_table(data, origin=str(path))
            except (OSError, ValueError):
                return None
            if dim != backend.dim or [t for t, _ in records] != list(expected_tokens):
                return None
            digest.update(hashlib.sha256(data).digest())
            matrix = (
                np.stack([vec for _, vec in records]).astype(np.float64)
                if records
                else np.zeros((0, dim))
            )
            matrices.append(matrix)
        ctx_embeddings.append(matrices[0])
        rsp_embeddings.append(matrices[1])
    if digest.hexdigest() != manifest.get("digest"):
        return None
    return ctx_embeddings, rsp_embeddings


def _save_embedding_cache(
    cache_dir: Path,
    members: Corpus,
    backend,
    context_side: str,
    ctx_tokens: list[list[str]],
    rsp_tokens: list[list[str]],
    ctx_embeddings: list[np.ndarray],
    rsp_embeddings: list[np.ndarray],
) -> None:
    vectors_dir = cache_dir / "vectors"
    vectors_dir.mkdir(parents=True, exist_ok=True)
    digest = hashlib.sha256()
    for inst, tokens_pair, matrices in zip(
        members, zip(ctx_tokens, rsp_tokens), zip(ctx_embeddings, rsp_embeddings)
    ):
        stem = _cache_file_stem(inst.id)
        for suffix, tokens, matrix in (
            (".ctx.evt", tokens_pair[0], matrices[0]),
            (".rsp.evt", tokens_pair[1], matrices[1]),
        ):
            data = encode_embedding_table(backend.dim, list(zip(tokens, matrix)))
            digest.update(hashlib.sha256(data).digest())
            (vectors_dir / (stem + suffix)).write_bytes(data)
    manifest = {
        "backend_id": backend.backend_id,
        "dim": backend.dim,
        "count": len(members),
        "digest": digest.hexdigest(),
        "context_side": context_side,
        "members_digest": _members_digest(members, context_side),
    }
    (cache_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def build_retrieval_set(
    train: Corpus,
    extra: Sequence[Corpus] = (),
    backend=None,
    context_side: str = "latest",
    cache_dir=None,
    progress: Callable[[str], None] | None = None,
) -> RetrievalSet:
    """Assemble the leave-one-out retrieval set.

    Members = train plus extra pools (ids must be globally distinct). Both
    BM25 side indices are always built; embeddings are computed when a
    backend is given, and persisted/reused under ``cache_dir`` keyed by the
    backend id, dim, context side and member content digest.
    """
    members = merge_corpora([train, *extra], name="retrieval-set")
    if progress:
        progress(f"retrieval set: {len(members)} members")
    ctx_tokens = [tokenize(member_context_text(m, context_side)) for m in members]
    rsp_tokens = [m.response.tokens for m in members]

    ctx_embeddings = rsp_embeddings = None
    if backend is not None:
        cached = None
        if cache_dir is not None:
            cached = _load_embedding_cache(
                Path(cache_dir), members, backend, context_side, ctx_tokens, rsp_tokens
            )
        if cached is not None:
            if progress:
                progress("embedding cache hit")
            ctx_embeddings, rsp_embeddings = cached
        else:
            if progress:
                progress(f"embedding {len(members)} members on both sides")
            ctx_embeddings = backend.embed_many(ctx_tokens)
            rsp_embeddings = backend.embed_many(rsp_tokens)
            if cache_dir is not None:
                _save_embedding_cache(
                    Path(cache_dir),
                    members,
                    backend,
                    context_side,
                    ctx_tokens,
                    rsp_tokens,
                    ctx_embeddings,
                    rsp_embeddings,
                )
                if progress:
                    progress("embedding cache written")

    return RetrievalSet(
        members, backend, context_side, ctx_tokens, rsp_tokens, ctx_embeddings, rsp_embeddings
    )


# ---------------------------------------------------------------------------
# Retrieval strategies
# ---------------------------------------------------------------------------

def _prefetch_candidates(
    rset: RetrievalSet, side: str, query_tokens: list[str], cfg: RetrievalConfig, self_idx
) -> list[int]:
    if cfg.exact_mode:
        return [i for i in range(len(rset)) if i != self_idx]
    scores = rset.side_index(side).score_all(query_tokens)
    order = np.lexsort((rset._id_rank, -scores))
    out: list[int] = []
    for i in order[: cfg.prefetch_m + 1]:
        if i == self_idx:
            continue
        out.append(int(i))
        if len(out) == cfg.prefetch_m:
            break
    return out


def _retrieve_side(
    query: DialogueInstance,
    rset: RetrievalSet,
    cfg: RetrievalConfig,
    strategy: Strategy,
    limit: int | None = None,
) -> list[Evidence]:
    if len(rset) == 0:
        raise RetrievalError("retrieval set is empty")
    limit = cfg.k if limit is None else limit
    side = _CTX if strategy == Strategy.C2C else _RSP
    self_idx = rset.index_of(query.id)
    query_tokens, query_matrix = rset.query_repr(
        query, need_embedding=cfg.scorer == ScorerKind.BERTSCORE
    )
    candidates = _prefetch_candidates(rset, side, query_tokens, cfg, self_idx)

    scored: list[tuple[float, MatchScore, int]] = []
    if cfg.scorer == ScorerKind.BM25:
        all_scores = rset.side_index(side).score_all(query_tokens)
        for i in candidates:
            score = MatchScore.scalar(all_scores[i])
            scored.append((score.f, score, i))
    else:
        side_embeddings = rset.side_embeddings(side)
        side_tokens = rset.side_tokens(side)
        weights = rset.idf_table(side) if cfg.use_idf else None
        for i in candidates:
            score = bertscore(
                query_matrix, side_embeddings[i], query_tokens, side_tokens[i], weights
            )
            scored.append((score.f, score, i))

    scored.sort(key=lambda item: (-item[0], rset.ids[item[2]]))
    members = rset.members
    return [
        Evidence(
            source_id=rset.ids[i],
            text=members[i].response.text,
            score=score,
            strategy=strategy,
            rank=position + 1,
        )
        for position, (_, score, i) in enumerate(scored[:limit])
    ]


def retrieve_c2c(query: DialogueInstance, rset: RetrievalSet, cfg: RetrievalConfig) -> list[Evidence]:
    return _retrieve_side(query, rset, cfg, Strategy.C2C)


def retrieve_c2r(query: DialogueInstance, rset: RetrievalSet, cfg: RetrievalConfig) -> list[Evidence]:
    return _retrieve_side(query, rset, cfg, Strategy.C2R)


def merge_mix(c2c: Sequence[Evidence], c2r: Sequence[Evidence], k: int) -> list[Evidence]:
    """Dedup the union per source_id (higher score wins, c2c wins exact ties),
    re-rank by score descending with ascending-id tie-break, truncate to k."""
    best: dict[str, Evidence] = {}
    for ev in [*c2c, *c2r]:
        current = best.get(ev.source_id)
        if current is None or ev.score.f > current.score.f:
            best[ev.source_id] = ev
    ranked = sorted(best.values(), key=lambda e: (-e.score.f, e.source_id))[:k]
    return [replace(ev, rank=position + 1) for position, ev in enumerate(ranked)]


def retrieve_mix(query: DialogueInstance, rset: RetrievalSet, cfg: RetrievalConfig) -> list[Evidence]:
    c2c = _retrieve_side(query, rset, cfg, Strategy.C2C)
    c2r = _retrieve_side(query, rset, cfg, Strategy.C2R)
    return merge_mix(c2c, c2r, cfg.k)


def retrieve_random(
    query: DialogueInstance, rset: RetrievalSet, cfg: RetrievalConfig, seed: int
) -> list[Evidence]:
    """Seeded uniform draw of k non-self members, scored on the response side.

    The per-query generator is ``random.Random(f"{seed}:{query.id}")``, so a
    fixed seed gives every query its own reproducible draw.
    """
    if len(rset) == 0:
        raise RetrievalError("retrieval set is empty")
    self_idx = rset.index_of(query.id)
    eligible = [i for i in range(len(rset)) if i != self_idx]
    rng = random.Random(f"{seed}:{query.id}")
    chosen = rng.sample(eligible, min(cfg.k, len(eligible)))

    query_tokens, query_matrix = rset.query_repr(
        query, need_embedding=cfg.scorer == ScorerKind.BERTSCORE
    )
    scored: list[tuple[float, MatchScore, int]] = []
    if cfg.scorer == ScorerKind.BM25:
        index = rset.side_index(_RSP)
        for i in chosen:
            score = MatchScore.scalar(index.score(query_tokens, rset.ids[i]))
            scored.append((score.f, score, i))
    else:
        side_embeddings = rset.side_embeddings(_RSP)
        side_tokens = rset.side_tokens(_RSP)
        weights = rset.idf_table(_RSP) if cfg.use_idf else None
        for i in chosen:
            score = bertscore(
                query_matrix, side_embeddings[i], query_tokens, side_tokens[i], weights
            )
            scored.append((score.f, score, i))
    scored.sort(key=lambda item: (-item[0], rset.ids[item[2]]))
    members = rset.members
    return [
        Evidence(
            source_id=rset.ids[i],
            text=members[i].response.text,
            score=score,
            strategy=Strategy.C2R,
            rank=position + 1,
        )
        for position, (_, score, i) in enumerate(scored)
    ]


def apply_filter(evidences: Sequence[Evidence], threshold: float | None) -> list[Evidence]:
    """Keep evidences with score.f >= threshold, order and ranks untouched."""
    if threshold is None:
        return list(evidences)
    return [ev for ev in evidences if ev.score.f >= threshold]


def retrieve(
    query: DialogueInstance,
    rset: RetrievalSet,
    cfg: RetrievalConfig,
    seed: int | None = None,
) -> list[Evidence]:
    """Dispatch on cfg.strategy; failures carry the offending query id."""
    try:
        if cfg.strategy == Strategy.C2C:
            return retrieve_c2c(query, rset, cfg)
        if cfg.strategy == Strategy.C2R:
            return retrieve_c2r(query, rset, cfg)
        if cfg.strategy == Strategy.MIX:
            return retrieve_mix(query, rset, cfg)
        if cfg.strategy == Strategy.RANDOM:
            if seed is None:
                raise ConfigError("random strategy requires a seed")
            return retrieve_random(query, rset, cfg, seed)
        raise ConfigError(f"unknown strategy {cfg.strategy!r}")
    except (ConfigError, RetrievalError):
        raise
    except Exception as exc:
        raise RetrievalError(f"query {query.id}: {exc}") from exc


_FORK_STATE: tuple | None = None


def _retrieve_at(index: int) -> list[Evidence]:
    queries, rset, cfg, seed = _FORK_STATE
    return retrieve(queries[index], rset, cfg, seed)


def retrieve_all(
    queries: Sequence[DialogueInstance],
    rset: RetrievalSet,
    cfg: RetrievalConfig,
    seed: int | None = None,
    workers: int = 1,
) -> list[list[Evidence]]:
    """Retrieve for every query, optionally across forked worker processes.

    Results keep query order regardless of worker count. Falls back to the
    serial path where fork is unavailable.
    """
    if workers <= 1 or len(queries) < 2:
        return [retrieve(q, rset, cfg, seed) for q in queries]
    try:
        ctx = multiprocessing.get_context("fork")
    except ValueError:
        return [retrieve(q, rset, cfg, seed) for q in queries]
    global _FORK_STATE
    _FORK_STATE = (list(queries), rset, cfg, seed)
    try:
        chunksize = max(1, len(queries) // (workers * 8))
        with ctx.Pool(processes=workers) as pool:
            return pool.map(_retrieve_at, range(len(queries)), chunksize=chunksize)
    finally:
        _FORK_STATE = None
