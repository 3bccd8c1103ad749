"""Matching scorers used for evidence retrieval.

Two scoring families live here:

* greedy embedding matching (``bertscore``): token-level cosine similarity with
  greedy best-match pooling on both sides, yielding precision / recall / F.
* Okapi BM25 over an inverted index (``Bm25Index``), used both as a standalone
  scorer and as the cheap pre-fetch stage in front of embedding re-ranking.

Both consume the shared ``tokenize`` output so that retrieval, filtering and
the evaluation metrics all agree on what a token is.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

BM25_K1 = 1.2
BM25_B = 0.75


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it into word and punctuation tokens.

    Runs of word characters form one token each; every other non-space
    character becomes a standalone token. The output is stable under
    re-tokenization of ``" ".join(tokens)``.
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class MatchScore:
    """Precision / recall / F triple produced by a scorer.

    BM25 has no precision-recall decomposition; its scores are carried in
    ``f`` with ``precision`` and ``recall`` fixed at 0.0.
    """

    precision: float
    recall: float
    f: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "MatchScore":
        denom = precision + recall
        f = 2.0 * precision * recall / denom if denom != 0.0 else 0.0
        return cls(float(precision), float(recall), float(f))

    @classmethod
    def scalar(cls, value: float) -> "MatchScore":
        return cls(0.0, 0.0, float(value))


def bertscore(
    cand_matrix: np.ndarray,
    ref_matrix: np.ndarray,
    cand_tokens: Sequence[str] | None = None,
    ref_tokens: Sequence[str] | None = None,
    idf_weights: Mapping[str, float] | None = None,
) -> MatchScore:
    """Greedy-matching similarity between two unit-row embedding matrices.

    ``sim[i, j]`` is the dot product of candidate token i and reference token
    j. Precision averages each candidate row's best match, recall averages
    each reference column's best match, and F is their harmonic mean (0.0
    when P + R == 0).

    When ``idf_weights`` is given the means become weighted means, normalized
    by the weight sums; tokens missing from the mapping weigh 1.0. Weighting
    requires the token sequences for both sides.
    """
    if cand_matrix.ndim != 2 or ref_matrix.ndim != 2:
        raise ValueError("embedding matrices must be 2-dimensional")
    if cand_matrix.shape[0] == 0 or ref_matrix.shape[0] == 0:
        raise ValueError("bertscore requires at least one token on each side")
    if cand_matrix.shape[1] != ref_matrix.shape[1]:
        raise ValueError(
            "embedding dimensions differ: "
            f"{cand_matrix.shape[1]} vs {ref_matrix.shape[1]}"
        )

    sim = cand_matrix @ ref_matrix.T
    best_cand = sim.max(axis=1)
    best_ref = sim.max(axis=0)

    if idf_weights is None:
        precision = float(best_cand.mean())
        recall = float(best_ref.mean())
    else:
        if cand_tokens is None or ref_tokens is None:
            raise ValueError("idf weighting requires token sequences")
        if len(cand_tokens) != cand_matrix.shape[0]:
            raise ValueError("candidate tokens do not match matrix rows")
        if len(ref_tokens) != ref_matrix.shape[0]:
            raise ValueError("reference tokens do not match matrix rows")
        w_cand = np.array([idf_weights.get(t, 1.0) for t in cand_tokens])
        w_ref = np.array([idf_weights.get(t, 1.0) for t in ref_tokens])
        if w_cand.sum() <= 0.0 or w_ref.sum() <= 0.0:
            raise ValueError("idf weights must have a positive sum")
        precision = float((best_cand * w_cand).sum() / w_cand.sum())
        recall = float((best_ref * w_ref).sum() / w_ref.sum())

    return MatchScore.from_pr(precision, recall)


class Bm25Index:
    """Okapi BM25 inverted index over a fixed list of tokenized documents.

    Scores follow the classic formulation: for each query token t present in
    document d,

        idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avgdl))

    with idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1). Scoring is additive
    over query token occurrences, so repeated query tokens count repeatedly.

    Build instances through :func:`bm25_build`.
    """

    def __init__(
        self,
        doc_ids: list[str],
        postings: dict[str, tuple[np.ndarray, np.ndarray]],
        doc_lengths: np.ndarray,
        k1: float,
        b: float,
    ):
        self._doc_ids = doc_ids
        self._postings = postings
        self._doc_len = doc_lengths
        self.k1 = k1
        self.b = b
        self.N = len(doc_ids)
        self.avgdl = float(doc_lengths.mean()) if self.N else 0.0
        if self.avgdl > 0.0:
            self._norm = k1 * (1.0 - b + b * doc_lengths / self.avgdl)
        else:
            self._norm = np.full(self.N, k1 * (1.0 - b))
        self._id_to_idx = {doc_id: i for i, doc_id in enumerate(doc_ids)}

    @property
    def doc_ids(self) -> list[str]:
        return list(self._doc_ids)

    @property
    def postings(self) -> dict[str, list[tuple[str, int]]]:
        """Token -> [(doc_id, term frequency)] view of the inverted index."""
        return {
            token: [(self._doc_ids[i], int(tf)) for i, tf in zip(idxs, tfs)]
            for token, (idxs, tfs) in self._postings.items()
        }

    @property
    def doc_lengths(self) -> dict[str, int]:
        return {doc_id: int(self._doc_len[i]) for i, doc_id in enumerate(self._doc_ids)}

    def doc_length(self, doc_id: str) -> int:
        return int(self._doc_len[self._id_to_idx[doc_id]])

    def idf(self, token: str) -> float:
        entry = self._postings.get(token)
        df = len(entry[0]) if entry is not None else 0
        return math.log((self.N - df + 0.5) / (df + 0.5) + 1.0)

    def idf_table(self) -> dict[str, float]:
        """idf for every indexed token (used for idf-weighted matching)."""
        return {token: self.idf(token) for token in self._postings}

    def score_all(self, query_tokens: Sequence[str]) -> np.ndarray:
        """Scores of every document against the query, in build order."""
        scores = np.zeros(self.N)
        for token, q_count in Counter(query_tokens).items():
            entry = self._postings.get(token)
            if entry is None:
                continue
            idxs, tfs = entry
            contrib = self.idf(token) * tfs * (self.k1 + 1.0)
            contrib /= tfs + self._norm[idxs]
            scores[idxs] += q_count * contrib
        return scores

    def score(self, query_tokens: Sequence[str], doc_id: str) -> float:
        """Score of a single document; equals ``score_all(...)[idx]``."""
        idx = self._id_to_idx[doc_id]
        total = 0.0
        for token, q_count in Counter(query_tokens).items():
            entry = self._postings.get(token)
            if entry is None:
                continue
            idxs, tfs = entry
            pos = int(np.searchsorted(idxs, idx))
            if pos >= len(idxs) or idxs[pos] != idx:
                continue
            tf = tfs[pos]
            contrib = self.idf(token) * tf * (self.k1 + 1.0)
            contrib /= tf + self._norm[idx]
            total += q_count * contrib
        return float(total)


def bm25_score(index: Bm25Index, query_tokens: Sequence[str], doc_id: str) -> MatchScore:
    """BM25 score of one indexed document against a query.

    The scalar lands in ``MatchScore.f`` (precision/recall stay 0.0). It is
    0.0 exactly when no query token occurs in the document. Unknown doc ids
    raise ``KeyError``.
    """
    if doc_id not in index._id_to_idx:
        raise KeyError(f"document id {doc_id!r} is not indexed")
    return MatchScore.scalar(index.score(query_tokens, doc_id))


def bm25_build(
    documents: Iterable[tuple[str, Sequence[str]]],
    k1: float = BM25_K1,
    b: float = BM25_B,
) -> Bm25Index:
    """Build a :class:`Bm25Index` from ``(doc_id, tokens)`` pairs.

    Document order is preserved; ids must be distinct. ``k1`` must be
    non-negative and ``b`` must lie in [0, 1].
    """
    if k1 < 0.0:
        raise ValueError(f"k1 must be non-negative, got {k1}")
    if not 0.0 <= b <= 1.0:
        raise ValueError(f"b must be in [0, 1], got {b}")

    doc_ids: list[str] = []
    lengths: list[int] = []
    raw_postings: dict[str, tuple[list[int], list[int]]] = {}
    seen: set[str] = set()
    for idx, (doc_id, tokens) in enumerate(documents):
        if doc_id in seen:
            raise ValueError(f"duplicate document id {doc_id!r}")
        seen.add(doc_id)
        doc_ids.append(doc_id)
        lengths.append(len(tokens))
        for token, tf in Counter(tokens).items():
            entry = raw_postings.setdefault(token, ([], []))
            entry[0].append(idx)
            entry[1].append(tf)

    postings = {
        token: (np.asarray(idxs, dtype=np.int64), np.asarray(tfs, dtype=np.float64))
        for token, (idxs, tfs) in raw_postings.items()
    }
    return Bm25Index(doc_ids, postings, np.asarray(lengths, dtype=np.float64), k1, b)
