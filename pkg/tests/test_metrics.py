import math
import random

import pytest

from dialogev.errors import AlignmentError
from dialogev.metrics import (
    BLEU_EPSILON,
    MAX_BIN_LABELS,
    MetricReport,
    OverlapMode,
    bleu,
    distinct_n,
    evaluate_corpus,
    evidence_overlap,
    mean_evidence_overlap,
    ngrams,
    overlap_report,
    triple_overlaps,
    unigram_f1,
)
from dialogev.retrieval import Evidence
from dialogev.scoring import MatchScore
from dialogev.triples import TripleRecord

import oracles
from helpers import make_instance


# ---------------------------------------------------------------------------
# unigram F1 (hand-computed cases)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("hyp,ref,want", [
    (["a", "b"], ["a", "b"], 1.0),
    (["a", "b"], ["b", "a"], 1.0),                       # order-insensitive
    (["x"], ["y"], 0.0),
    (["a"], ["a", "b"], 2 * 1.0 * 0.5 / 1.5),
    (["a", "a"], ["a"], 2 * 0.5 * 1.0 / 1.5),            # clipping
    (["a", "a"], ["a", "a"], 1.0),
    (["a", "b", "c"], ["b"], 0.5),
    (["a"], ["a", "a", "a"], 2 * 1.0 * (1 / 3) / (4 / 3)),
    (["a", "b", "b"], ["b", "b", "c"], 2 * (2 / 3) * (2 / 3) / (4 / 3)),
    ([], ["a"], 0.0),
    (["the", ",", "cat"], ["the", "cat", "."], 2 * (2 / 3) * (2 / 3) / (4 / 3)),
])
def test_unigram_f1_hand_cases(hyp, ref, want):
    assert unigram_f1(hyp, ref) == pytest.approx(want)


def test_unigram_f1_empty_reference_rejected():
    with pytest.raises(ValueError, match="reference"):
        unigram_f1(["a"], [])


def test_unigram_f1_matches_reference_impl():
    rng = random.Random(0)
    vocab = ["a", "b", "c", "d"]
    for _ in range(200):
        hyp = [rng.choice(vocab) for _ in range(rng.randint(0, 8))]
        ref = [rng.choice(vocab) for _ in range(rng.randint(1, 8))]
        assert unigram_f1(hyp, ref) == pytest.approx(oracles.unigram_f1_reference(hyp, ref))


# ---------------------------------------------------------------------------
# distinct-n (hand-computed cases)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("hyps,n,want", [
    ([["a", "a", "a"]], 1, 1 / 3),
    ([["a", "b", "c"]], 1, 1.0),
    ([["a"], ["a"]], 1, 1 / 2),
    ([["a"], ["b"]], 1, 1.0),
    ([["a", "b"], ["b", "c"]], 1, 3 / 4),
    ([["a", "b", "a"]], 2, 1.0),
    ([["a", "b", "a", "b"]], 2, 2 / 3),
    ([["a"], ["b", "c"]], 2, 1.0),
    ([[], ["a"]], 1, 1.0),                                # empty hyp adds nothing
    ([["x", "x"], ["x", "x"]], 2, 1 / 2),
    ([["a", "b", "c", "a", "b"]], 3, 3 / 3),
])
def test_distinct_n_hand_cases(hyps, n, want):
    assert distinct_n(hyps, n) == pytest.approx(want)


def test_distinct_n_errors():
    with pytest.raises(ValueError, match="no 2-grams"):
        distinct_n([["a"]], 2)
    with pytest.raises(ValueError, match="n must"):
        distinct_n([["a"]], 0)


def test_distinct_n_matches_reference_impl():
    rng = random.Random(1)
    for _ in range(100):
        hyps = [
            [rng.choice("abcd") for _ in range(rng.randint(2, 6))]
            for _ in range(rng.randint(1, 5))
        ]
        for n in (1, 2):
            assert distinct_n(hyps, n) == pytest.approx(oracles.distinct_reference(hyps, n))


def test_ngrams_windows():
    assert ngrams(["a", "b", "c"], 2) == [("a", "b"), ("b", "c")]
    assert ngrams(["a"], 2) == []


# ---------------------------------------------------------------------------
# corpus BLEU (pinned smoothing semantics)
# ---------------------------------------------------------------------------

def test_bleu_perfect_corpus_is_one():
    pairs = [["the", "cat", "sat", "down", "today"], ["a", "b", "c", "d"]]
    assert bleu(pairs, pairs) == pytest.approx(1.0)


def test_bleu_brevity_penalty():
    got = bleu([["a"]], [["a", "b"]])
    # p1 = 1, p2..p4 have no hyp n-grams at all -> epsilon each
    want = math.exp(1 - 2 / 1) * math.exp(
        (math.log(1.0) + 3 * math.log(BLEU_EPSILON)) / 4
    )
    assert got == pytest.approx(want)


def test_bleu_zero_matches_use_scaled_epsilon():
    got = bleu([["x", "y"]], [["a", "b"]])
    # totals: 2 unigrams, 1 bigram, none beyond; zero matches
    want = math.exp(
        (
            math.log(BLEU_EPSILON / 2)
            + math.log(BLEU_EPSILON / 1)
            + 2 * math.log(BLEU_EPSILON)
        )
        / 4
    )
    assert got == pytest.approx(want)


def test_bleu_empty_hypothesis_corpus_scores_zero():
    assert bleu([[], []], [["a"], ["b"]]) == 0.0


def test_bleu_appending_perfect_pair_keeps_perfect_score():
    base = [["w1", "w2", "w3", "w4", "w5"], ["u1", "u2", "u3", "u4"]]
    assert bleu(base, base) == pytest.approx(1.0)
    for extra_len in range(1, 7):
        extra = [f"v{i}" for i in range(extra_len)]
        hyps = base + [extra]
        assert bleu(hyps, hyps) == pytest.approx(1.0), extra_len


def test_bleu_validation():
    with pytest.raises(ValueError, match="hypotheses"):
        bleu([["a"]], [["a"], ["b"]])
    with pytest.raises(ValueError, match="at least one"):
        bleu([], [])
    with pytest.raises(ValueError, match="non-empty"):
        bleu([["a"]], [[]])


def test_bleu_matches_reference_smoke():
    rng = random.Random(2)
    vocab = ["a", "b", "c", "d", "e"]
    for _ in range(30):
        n_pairs = rng.randint(1, 6)
        hyps, refs = [], []
        for _ in range(n_pairs):
            hyps.append([rng.choice(vocab) for _ in range(rng.randint(0, 9))])
            refs.append([rng.choice(vocab) for _ in range(rng.randint(1, 9))])
        assert bleu(hyps, refs) == pytest.approx(
            oracles.corpus_bleu_reference(hyps, refs), abs=1e-12
        )


# ---------------------------------------------------------------------------
# evaluate_corpus
# ---------------------------------------------------------------------------

def test_evaluate_corpus_combines_metrics():
    hyps = [["a", "b", "c", "d"], ["x"]]
    refs = [["a", "b", "c", "d"], ["y"]]
    report = evaluate_corpus(hyps, refs)
    want_f1 = (1.0 + 0.0) / 2
    assert report.f1 == pytest.approx(want_f1)
    assert report.bleu == pytest.approx(bleu(hyps, refs))
    assert report.dist1 == pytest.approx(distinct_n(hyps, 1))
    assert report.dist2 == pytest.approx(distinct_n(hyps, 2))
    assert report.n_examples == 2


def test_evaluate_corpus_strict_dist():
    hyps, refs = [["a"]], [["a"]]
    with pytest.raises(ValueError, match="2-grams"):
        evaluate_corpus(hyps, refs, strict_dist=True)
    relaxed = evaluate_corpus(hyps, refs, strict_dist=False)
    assert relaxed.dist1 == 1.0 and relaxed.dist2 is None


def test_metric_report_to_dict():
    report = MetricReport(f1=0.5, bleu=0.25, dist1=0.9, dist2=None, n_examples=7)
    obj = report.to_dict()
    assert obj == {
        "f1": 0.5, "bleu": 0.25, "dist1": 0.9, "dist2": None, "n": 7,
        "meta": {"bleu_max_n": 4, "smoothing": "add-eps-1e-09", "dist_level": "corpus"},
    }


def test_evaluate_corpus_validation():
    with pytest.raises(ValueError):
        evaluate_corpus([], [])
    with pytest.raises(ValueError):
        evaluate_corpus([["a"]], [])


# ---------------------------------------------------------------------------
# evidence overlap + binning
# ---------------------------------------------------------------------------

def overlap_record(rid, shared_counts, resp_token_count=20):
    """Record whose j-th evidence shares exactly shared_counts[j] tokens
    with the response."""
    resp_words = [f"t{i}" for i in range(resp_token_count)]
    inst = make_instance(rid, ["context filler"], " ".join(resp_words))
    evidences = []
    for rank, n_shared in enumerate(shared_counts, start=1):
        words = resp_words[:n_shared] + [f"zz{rank}x{j}" for j in range(3)]
        evidences.append(Evidence(
            source_id=f"{rid}-e{rank}", text=" ".join(words),
            score=MatchScore.scalar(0.5), strategy=None, rank=rank,
        ))
    return TripleRecord(instance=inst, evidences=evidences, split_tag="test")


@pytest.mark.parametrize("ev_tokens,resp_tokens,want_set,want_multi", [
    (["a", "b"], ["a", "b"], 2, 2),
    (["a", "a"], ["a"], 1, 1),
    (["a", "a"], ["a", "a"], 1, 2),
    (["a", "b", "c"], ["c"], 1, 1),
    (["x"], ["y"], 0, 0),
    ([], ["a"], 0, 0),
    (["a", "b", "a", "b"], ["b", "a", "b"], 2, 3),
])
def test_evidence_overlap_cases(ev_tokens, resp_tokens, want_set, want_multi):
    assert evidence_overlap(ev_tokens, resp_tokens) == want_set
    assert evidence_overlap(ev_tokens, resp_tokens, multiset=True) == want_multi


def test_triple_overlaps_tokenizes_evidence_text():
    rec = overlap_record("r", [0, 3, 9])
    assert triple_overlaps(rec) == [0, 3, 9]


def test_mean_evidence_overlap():
    records = [overlap_record("r1", [2, 4]), overlap_record("r2", [6])]
    assert mean_evidence_overlap(records) == pytest.approx((2 + 4 + 6) / 3)
    assert mean_evidence_overlap([overlap_record("r3", [])]) == 0.0


@pytest.mark.parametrize("shared_counts,want_label", [
    ([0], "0"),
    ([], "0"),                      # no evidence at all -> max() default 0
    ([1], "1"),
    ([3, 1], "3"),
    ([9], "9"),
    ([10], "≥10"),
    ([17], "≥10"),
    ([4, 12], "≥10"),
])
def test_overlap_report_max_binning(shared_counts, want_label):
    rec = overlap_record("r", shared_counts)
    hyps = [("r", rec.instance.response.tokens)]
    report = overlap_report([rec], hyps, "max")
    assert [b.label for b in report.bins] == MAX_BIN_LABELS
    populated = [b.label for b in report.bins if b.n_examples]
    assert populated == [want_label]


@pytest.mark.parametrize("shared_counts,want_label", [
    ([0], "[0,5)"),
    ([2, 2], "[0,5)"),
    ([5], "[5,10)"),
    ([3, 4], "[5,10)"),
    ([9, 9, 5], "[20,25)"),
])
def test_overlap_report_sum_binning(shared_counts, want_label):
    rec = overlap_record("r", shared_counts)
    report = overlap_report([rec], [("r", ["t0"])], "sum")
    populated = [b.label for b in report.bins if b.n_examples]
    assert populated == [want_label]
    # sum mode reports consecutive width-5 bins up to the observed top
    labels = [b.label for b in report.bins]
    assert labels[0] == "[0,5)"
    assert labels == [f"[{5 * i},{5 * (i + 1)})" for i in range(len(labels))]
    assert labels[-1] == want_label


def test_overlap_report_multiset_changes_bin():
    resp = "a a b"
    inst = make_instance("m", ["ctx"], resp)
    dup_ev = Evidence(source_id="e", text="a a", score=MatchScore.scalar(0.1),
                      strategy=None, rank=1)
    rec = TripleRecord(instance=inst, evidences=[dup_ev], split_tag="t")
    hyps = [("m", ["a"])]
    set_report = overlap_report([rec], hyps, OverlapMode.MAX, multiset=False)
    multi_report = overlap_report([rec], hyps, OverlapMode.MAX, multiset=True)
    assert [b.label for b in set_report.bins if b.n_examples] == ["1"]
    assert [b.label for b in multi_report.bins if b.n_examples] == ["2"]


def test_overlap_report_groups_and_scores_bins():
    records = [
        overlap_record("r1", [2]),
        overlap_record("r2", [2, 1]),
        overlap_record("r3", [7]),
    ]
    hyps = [(r.instance.id, r.instance.response.tokens) for r in records]
    report = overlap_report(records, hyps, OverlapMode.MAX)
    by_label = {b.label: b for b in report.bins}
    assert by_label["2"].n_examples == 2
    assert by_label["7"].n_examples == 1
    assert by_label["0"].n_examples == 0 and by_label["0"].metrics is None
    # hyps equal the references here, so every populated bin scores f1 = 1
    assert by_label["2"].metrics.f1 == pytest.approx(1.0)
    assert by_label["2"].metrics.n_examples == 2


def test_overlap_report_empty_bins_have_no_metrics():
    report = overlap_report([overlap_record("r", [5])],
                            [("r", ["t0", "t1"])], "max")
    for b in report.bins:
        if b.n_examples == 0:
            assert b.metrics is None


def test_overlap_report_to_json_obj():
    report = overlap_report([overlap_record("r", [1])], [("r", ["t0"])], "max")
    obj = report.to_json_obj()
    assert [entry["bin"] for entry in obj] == MAX_BIN_LABELS
    assert all(set(entry) == {"bin", "n", "metrics"} for entry in obj)
    populated = [entry for entry in obj if entry["n"]]
    assert populated[0]["metrics"]["n"] == 1


def test_overlap_report_alignment_errors():
    rec = overlap_record("r1", [1])
    with pytest.raises(AlignmentError, match="1 triples but 2"):
        overlap_report([rec], [("r1", ["a"]), ("r2", ["b"])], "max")
    with pytest.raises(AlignmentError, match="position 0"):
        overlap_report([rec], [("other", ["a"])], "max")
    with pytest.raises(ValueError, match="no triples"):
        overlap_report([], [], "max")


def test_overlap_report_mode_accepts_string_and_enum():
    rec = overlap_record("r", [1])
    hyps = [("r", ["t0"])]
    assert overlap_report([rec], hyps, "max").mode == OverlapMode.MAX
    assert overlap_report([rec], hyps, OverlapMode.SUM).mode == OverlapMode.SUM
    with pytest.raises(ValueError):
        overlap_report([rec], hyps, "median")
