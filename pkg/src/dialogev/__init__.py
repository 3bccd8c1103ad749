"""dialogev: self-retrieval evidence augmentation for dialogue corpora.

The library retrieves evidence for each dialogue context from the training
corpus itself (leave-one-out), filters and ranks it, exports
context-evidence-response triples in generator-ready formats, and evaluates
generated responses with corpus metrics and overlap analyses. The ``dialogev``
console script wires the same pieces into a file-based pipeline.
"""

from .corpus import (
    Corpus,
    DialogueInstance,
    IngestReport,
    PreprocessLimits,
    SplitSpec,
    Utterance,
    ingest_reddit_chains,
    load_corpus,
    preprocess,
    save_corpus,
    split,
)
from .embedding import (
    HttpEmbeddingBackend,
    StaticTableBackend,
    embed,
    hashed_unit_vector,
    read_embedding_table,
    write_embedding_table,
)
from .errors import (
    AlignmentError,
    ConfigError,
    DialogevError,
    IngestError,
    RetrievalError,
    TransportError,
)
from .metrics import (
    MetricReport,
    OverlapMode,
    OverlapReport,
    bleu,
    distinct_n,
    evaluate_corpus,
    overlap_report,
    unigram_f1,
)
from .retrieval import (
    Evidence,
    RetrievalConfig,
    RetrievalSet,
    ScorerKind,
    Strategy,
    apply_filter,
    build_retrieval_set,
    retrieve,
    retrieve_c2c,
    retrieve_c2r,
    retrieve_mix,
    retrieve_random,
)
from .scoring import Bm25Index, MatchScore, bertscore, bm25_build, bm25_score, tokenize
from .triples import (
    FormattedExample,
    TripleRecord,
    build_triples,
    format_fid,
    format_gpt,
    read_triples,
    write_formatted,
    write_triples,
)

__version__ = "0.1.0"
