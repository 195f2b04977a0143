import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nuggetbench.errors import ContractError, EmptyCorpusError
from nuggetbench.gateway import DenseIndex, search_dense
from nuggetbench.lexical import (
    analyze,
    bm25_score,
    build_lexical_index,
    idf,
    load_index,
    save_index,
    search_lexical,
)
from nuggetbench.runs import RetrievalRun, ScoredDoc, format_trec, parse_trec, rank_scores, read_trec, write_trec
from oracles import bm25_oracle, dense_oracle, rankings_agree

VOCAB = ["alpha", "beta", "gamma", "delta", "chroma", "embed", "x1", "Foo_bar", "the"]


def random_corpus(rng, n_docs=None):
    n_docs = n_docs or rng.randint(1, 12)
    return [(f"d{i:02d}", " ".join(rng.choice(VOCAB) for _ in range(rng.randint(0, 15)))) for i in range(n_docs)]


def test_analyzer_lowercases_and_splits_non_alnum():
    assert analyze("Chroma.from_documents(x1, Foo-BAR)") == ["chroma", "from", "documents", "x1", "foo", "bar"]
    assert analyze("the a of") == ["the", "a", "of"]  # no stopword removal


def test_idf_matches_lucene_form():
    assert idf(1, 10) == pytest.approx(math.log(1 + 9.5 / 1.5))
    assert idf(10, 10) > 0


def test_hand_computed_bm25():
    docs = [("a", "apple apple banana"), ("b", "banana"), ("c", "cherry")]
    index = build_lexical_index(docs)
    avgdl = 5 / 3
    i = math.log(1 + (3 - 1 + 0.5) / 1.5)
    expected = i * 2 * 1.9 / (2 + 0.9 * (0.6 + 0.4 * 3 / avgdl))
    hits = search_lexical(index, "apple", 10)
    assert [h.doc_id for h in hits] == ["a"]
    assert hits[0].score == pytest.approx(expected, abs=1e-12)
    assert bm25_score(index, ["apple"], 0) == hits[0].score


def test_repeated_query_terms_count_twice():
    index = build_lexical_index([("a", "apple pie"), ("b", "banana")])
    one = search_lexical(index, "apple", 5)[0].score
    two = search_lexical(index, "apple apple", 5)[0].score
    assert two == pytest.approx(2 * one)


def test_ties_break_by_doc_id_and_zero_scores_dropped():
    index = build_lexical_index([("z", "same words"), ("a", "same words"), ("m", "other")])
    hits = search_lexical(index, "same", 10)
    assert [h.doc_id for h in hits] == ["a", "z"]
    assert [h.rank for h in hits] == [1, 2]
    assert search_lexical(index, "absent", 10) == []


def test_empty_and_duplicate_corpus_rejected():
    with pytest.raises(EmptyCorpusError):
        build_lexical_index([])
    with pytest.raises(ValueError):
        build_lexical_index([("a", "x"), ("a", "y")])


def test_index_roundtrip(tmp_path):
    index = build_lexical_index(random_corpus(random.Random(1), 10))
    save_index(index, tmp_path / "bm25")
    loaded = load_index(tmp_path / "bm25")
    for q in ["alpha beta", "chroma", "foo bar the"]:
        assert search_lexical(loaded, q, 5) == search_lexical(index, q, 5)


@pytest.mark.parametrize("seed", range(60))
def test_bm25_matches_brute_force(seed):
    rng = random.Random(seed)
    docs = random_corpus(rng)
    index = build_lexical_index(docs)
    for _ in range(3):
        query = " ".join(rng.choice(VOCAB + ["missing"]) for _ in range(rng.randint(1, 4)))
        k = rng.randint(1, 8)
        got = [(h.doc_id, h.score) for h in search_lexical(index, query, k)]
        err = rankings_agree(got, bm25_oracle(docs, query, len(docs)), k)
        assert not err, (query, err)


@pytest.mark.parametrize("seed", range(60))
def test_dense_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(1, 300)), int(rng.integers(2, 24))
    m = rng.standard_normal((n, d))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    ids = [f"doc{i:04d}" for i in rng.permutation(n)]
    q = rng.standard_normal(d)
    k = int(rng.integers(1, n + 1))
    got = [(h.doc_id, h.score) for h in search_dense(DenseIndex(m, ids, "m"), q, k)]
    err = rankings_agree(got, dense_oracle(m.tolist(), ids, q.tolist(), n), k)
    assert not err, err


def test_dense_exact_ties_break_by_doc_id():
    m = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    hits = search_dense(DenseIndex(m, ["b", "a", "c"], "m"), np.array([1.0, 0.0]), 3)
    assert [h.doc_id for h in hits] == ["a", "b", "c"]


def test_dense_dimension_mismatch():
    with pytest.raises(ContractError):
        search_dense(DenseIndex(np.eye(3), ["a", "b", "c"], "m"), np.ones(2), 1)


def test_dense_index_roundtrip(tmp_path):
    idx = DenseIndex(np.eye(3), ["a", "b", "c"], "model/x")
    idx.save(tmp_path / "d.bin")
    back = DenseIndex.load(tmp_path / "d.bin")
    assert back.doc_ids == idx.doc_ids and back.model_id == "model/x"
    assert np.array_equal(back.matrix, idx.matrix)


def test_rank_scores_orders_and_truncates():
    out = rank_scores({"b": 1.0, "a": 1.0, "c": 2.0}, 2)
    assert out == [ScoredDoc("c", 2.0, 1), ScoredDoc("a", 1.0, 2)]


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.from_regex(r"[a-z]{1,3}/[a-z_]{1,8}\.py_\d{1,3}_\d{1,3}", fullmatch=True),
                       st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=10))
def test_trec_roundtrip(scores):
    run = RetrievalRun("tag", {"q1": rank_scores(scores)})
    assert parse_trec(format_trec(run)) == run


def test_trec_file_roundtrip(tmp_path):
    run = RetrievalRun("bm25", {"1": rank_scores({"a": 0.5, "b": 0.25}), "2": rank_scores({"c": 1.0})})
    write_trec(run, tmp_path / "r.trec")
    assert read_trec(tmp_path / "r.trec") == run
    assert (tmp_path / "r.trec").read_text().splitlines()[0] == "1 Q0 a 1 0.5 bm25"
