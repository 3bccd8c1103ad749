"""Shared fixtures for the retrieval-library tests."""
import pytest

from dialogev.embedding import StaticTableBackend
from dialogev.retrieval import build_retrieval_set

from helpers import topic_corpus


@pytest.fixture(scope="session")
def backend32():
    return StaticTableBackend.hashed(32)


@pytest.fixture(scope="session")
def small_set(backend32):
    """60-instance topic corpus with its retrieval structures, shared."""
    corpus = topic_corpus(60, seed=7, name="small")
    rset = build_retrieval_set(corpus, backend=backend32)
    return corpus, rset
