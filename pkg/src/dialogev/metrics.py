"""Automatic evaluation: unigram F1, corpus BLEU, Dist-1/2, overlap analysis.

All metrics consume token sequences from the shared tokenizer. Corpus BLEU
is pinned to one definition so numbers are comparable across runs: modified
n-gram precisions for n = 1..4 pooled over the corpus, add-epsilon smoothing
(p_n = eps / total_n when a numerator is zero, p_n = eps when order n has no
n-grams at all), geometric mean, multiplied by the brevity penalty
exp(1 - ref_len / hyp_len) when the hypotheses are shorter (0.0 for empty
hypotheses). The report metadata records these choices.

The overlap analysis bins test instances by the word overlap between their
retrieved evidences and the ground-truth response: per evidence the number
of shared unique tokens (optionally multiset counts), aggregated per
instance with max (bins 0..9 and >=10) or sum (width-5 bins), then a
MetricReport per bin.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import AlignmentError
from .scoring import tokenize
from .triples import TripleRecord

BLEU_MAX_N = 4
BLEU_EPSILON = 1e-9

MAX_BIN_LABELS = [str(i) for i in range(10)] + ["≥10"]
SUM_BIN_WIDTH = 5


class OverlapMode(str, Enum):
    MAX = "max"
    SUM = "sum"


@dataclass(frozen=True)
class MetricReport:
    f1: float
    bleu: float
    dist1: float | None
    dist2: float | None
    n_examples: int

    def to_dict(self) -> dict:
        return {
            "f1": self.f1,
            "bleu": self.bleu,
            "dist1": self.dist1,
            "dist2": self.dist2,
            "n": self.n_examples,
            "meta": {
                "bleu_max_n": BLEU_MAX_N,
                "smoothing": f"add-eps-{BLEU_EPSILON:.0e}",
                "dist_level": "corpus",
            },
        }


@dataclass(frozen=True)
class OverlapBin:
    label: str
    n_examples: int
    metrics: MetricReport | None


@dataclass(frozen=True)
class OverlapReport:
    mode: OverlapMode
    bins: list[OverlapBin]

    def to_json_obj(self) -> list[dict]:
        return [
            {
                "bin": b.label,
                "n": b.n_examples,
                "metrics": b.metrics.to_dict() if b.metrics is not None else None,
            }
            for b in self.bins
        ]


def ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def unigram_f1(hyp: Sequence[str], ref: Sequence[str]) -> float:
    """Bag-of-unigrams F1 with multiset intersection; empty hyp scores 0."""
    if not ref:
        raise ValueError("unigram_f1 reference must be non-empty")
    if not hyp:
        return 0.0
    overlap = sum((Counter(hyp) & Counter(ref)).values())
    precision = overlap / len(hyp)
    recall = overlap / len(ref)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def bleu(
    hyps: Sequence[Sequence[str]],
    refs: Sequence[Sequence[str]],
    max_n: int = BLEU_MAX_N,
    epsilon: float = BLEU_EPSILON,
) -> float:
    """Corpus BLEU with the smoothing documented in the module docstring."""
    if len(hyps) != len(refs):
        raise ValueError(f"got {len(hyps)} hypotheses for {len(refs)} references")
    if not hyps:
        raise ValueError("bleu needs at least one pair")
    correct = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyps, refs):
        if not ref:
            raise ValueError("bleu references must be non-empty")
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = Counter(ngrams(hyp, n))
            if not hyp_counts:
                continue
            ref_counts = Counter(ngrams(ref, n))
            total[n - 1] += sum(hyp_counts.values())
            correct[n - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items()
            )
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(max_n):
        if total[n] == 0:
            p_n = epsilon
        elif correct[n] == 0:
            p_n = epsilon / total[n]
        else:
            p_n = correct[n] / total[n]
        log_sum += math.log(p_n)
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return brevity * math.exp(log_sum / max_n)


def distinct_n(hyps: Sequence[Sequence[str]], n: int) -> float:
    """Unique n-grams across all hypotheses divided by total n-grams."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    unique: set[tuple[str, ...]] = set()
    total = 0
    for hyp in hyps:
        grams = ngrams(hyp, n)
        total += len(grams)
        unique.update(grams)
    if total == 0:
        raise ValueError(f"no {n}-grams in any hypothesis")
    return len(unique) / total


def evaluate_corpus(
    hyps: Sequence[Sequence[str]],
    refs: Sequence[Sequence[str]],
    strict_dist: bool = True,
) -> MetricReport:
    """Mean unigram F1, corpus BLEU and Dist-1/2 over aligned token lists.

    With ``strict_dist`` off, degenerate Dist-n (no n-grams at all) becomes
    None instead of an error; the per-bin overlap breakdown uses that.
    """
    if len(hyps) != len(refs):
        raise ValueError(f"got {len(hyps)} hypotheses for {len(refs)} references")
    if not hyps:
        raise ValueError("no examples to evaluate")
    f1 = sum(unigram_f1(h, r) for h, r in zip(hyps, refs)) / len(hyps)
    bleu_value = bleu(hyps, refs)
    dists: list[float | None] = []
    for n in (1, 2):
        try:
            dists.append(distinct_n(hyps, n))
        except ValueError:
            if strict_dist:
                raise
            dists.append(None)
    return MetricReport(
        f1=f1, bleu=bleu_value, dist1=dists[0], dist2=dists[1], n_examples=len(hyps)
    )


# ---------------------------------------------------------------------------
# Overlap analysis
# ---------------------------------------------------------------------------

def evidence_overlap(
    evidence_tokens: Sequence[str], response_tokens: Sequence[str], multiset: bool = False
) -> int:
    """Word overlap between one evidence and the gold response.

    Unique-token set intersection by default; the multiset variant counts
    shared occurrences instead.
    """
    if multiset:
        return sum((Counter(evidence_tokens) & Counter(response_tokens)).values())
    return len(set(evidence_tokens) & set(response_tokens))


def triple_overlaps(rec: TripleRecord, multiset: bool = False) -> list[int]:
    response_tokens = rec.instance.response.tokens
    return [
        evidence_overlap(tokenize(ev.text), response_tokens, multiset)
        for ev in rec.evidences
    ]


def mean_evidence_overlap(records: Sequence[TripleRecord], multiset: bool = False) -> float:
    """Mean per-evidence gold overlap across all evidences in the records."""
    total = 0
    count = 0
    for rec in records:
        overlaps = triple_overlaps(rec, multiset)
        total += sum(overlaps)
        count += len(overlaps)
    return total / count if count else 0.0


def _max_bin_index(value: int) -> int:
    return min(value, 10)


def overlap_report(
    records: Sequence[TripleRecord],
    hyps: Sequence[tuple[str, Sequence[str]]],
    mode: OverlapMode | str,
    multiset: bool = False,
) -> OverlapReport:
    """Bin records by evidence-response overlap and evaluate each bin.

    ``hyps`` must align with ``records`` positionally and by id; the first
    mismatch aborts. MAX mode always reports the eleven bins 0..9 and >=10;
    SUM mode reports consecutive width-5 bins up to the largest observed sum.
    """
    mode = OverlapMode(mode)
    if not records:
        raise ValueError("no triples to analyze")
    if len(records) != len(hyps):
        raise AlignmentError(
            f"have {len(records)} triples but {len(hyps)} hypotheses"
        )
    for position, (rec, (hyp_id, _)) in enumerate(zip(records, hyps)):
        if rec.instance.id != hyp_id:
            raise AlignmentError(
                f"id mismatch at position {position}: triple {rec.instance.id!r} "
                f"vs hypothesis {hyp_id!r}"
            )

    values = []
    for rec in records:
        overlaps = triple_overlaps(rec, multiset)
        values.append(max(overlaps, default=0) if mode == OverlapMode.MAX else sum(overlaps))

    if mode == OverlapMode.MAX:
        labels = list(MAX_BIN_LABELS)
        indices = [_max_bin_index(v) for v in values]
    else:
        top = max(values) // SUM_BIN_WIDTH
        labels = [
            f"[{i * SUM_BIN_WIDTH},{(i + 1) * SUM_BIN_WIDTH})" for i in range(top + 1)
        ]
        indices = [v // SUM_BIN_WIDTH for v in values]

    grouped: dict[int, list[int]] = {}
    for position, bin_idx in enumerate(indices):
        grouped.setdefault(bin_idx, []).append(position)

    bins = []
    for bin_idx, label in enumerate(labels):
        positions = grouped.get(bin_idx, [])
        if positions:
            bin_hyps = [list(hyps[p][1]) for p in positions]
            bin_refs = [records[p].instance.response.tokens for p in positions]
            metrics = evaluate_corpus(bin_hyps, bin_refs, strict_dist=False)
        else:
            metrics = None
        bins.append(OverlapBin(label=label, n_examples=len(positions), metrics=metrics))
    return OverlapReport(mode=mode, bins=bins)
