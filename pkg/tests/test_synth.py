import numpy as np
import pytest

import oracles
from ckqti.metrics import evaluate
from ckqti.synth import SynthParams, make_synthetic_corpus
from ckqti.trec import parse_qrels, parse_run


@pytest.fixture(scope="module")
def sc():
    return make_synthetic_corpus(seed=0, docs=500, vocab=800)


def corpus_tokens(sc):
    ids, docs = [], []
    for line in sc.corpus.splitlines():
        cols = line.split("\t")
        assert len(cols) == 4
        ids.append(cols[0])
        docs.append(cols[3].split())
    return ids, docs


def query_map(text):
    return dict(line.split("\t") for line in text.splitlines())


def test_same_seed_same_bytes(tmp_path):
    a = make_synthetic_corpus(seed=3, docs=60, vocab=200).write(tmp_path / "a")
    b = make_synthetic_corpus(seed=3, docs=60, vocab=200).write(tmp_path / "b")
    for name in a:
        assert a[name].read_bytes() == b[name].read_bytes()
    c = make_synthetic_corpus(seed=4, docs=60, vocab=200)
    assert c.corpus != a["corpus"].read_text()


def test_sizes_and_lengths(sc):
    ids, docs = corpus_tokens(sc)
    p = SynthParams()
    assert len(ids) == 500 == len(set(ids))
    assert all(p.min_len <= len(d) <= p.max_len + p.query_terms * p.burst_repeat[1] for d in docs)
    assert len(query_map(sc.train_queries)) == p.train_queries
    assert len(query_map(sc.test_queries)) == p.test_queries


def test_every_test_query_has_relevant_documents(sc):
    qrels = parse_qrels(sc.test_qrels.splitlines())
    assert set(qrels) == set(query_map(sc.test_queries))
    assert all(any(g >= 1 for g in rels.values()) for rels in qrels.values())


def test_grade_two_means_all_query_terms_present(sc):
    ids, docs = corpus_tokens(sc)
    tokens = dict(zip(ids, map(set, docs)))
    queries = query_map(sc.test_queries)
    for qid, rels in parse_qrels(sc.test_qrels.splitlines()).items():
        terms = set(queries[qid].split())
        for d, g in rels.items():
            assert (g == 2) == (terms <= tokens[d])


def test_candidates_are_loop_bm25(sc):
    ids, docs = corpus_tokens(sc)
    queries = query_map(sc.train_queries)
    run = parse_run(sc.candidates.splitlines())
    for qid in sorted(run)[:5]:
        want = oracles.bm25_rank(docs, queries[qid].split())[:100]
        assert [d for d, _ in run[qid]] == [ids[i] for i, _ in want]
        np.testing.assert_allclose([s for _, s in run[qid]], [s for _, s in want], atol=1e-6)


def test_train_pairs_are_on_topic_and_match(sc):
    ids, docs = corpus_tokens(sc)
    tokens = dict(zip(ids, map(set, docs)))
    queries = query_map(sc.train_queries)
    pairs = [line.split("\t") for line in sc.train_pairs.splitlines()]
    assert {q for q, _ in pairs} <= set(queries)
    assert all(tokens[d] & set(queries[q].split()) for q, d in pairs)


def test_lexical_baseline_is_informative_but_imperfect(sc):
    """BM25 alone should find relevant documents often, but not always."""
    ids, docs = corpus_tokens(sc)
    run = {qid: [(ids[i], s) for i, s in oracles.bm25_rank(docs, text.split())[:100]]
           for qid, text in query_map(sc.test_queries).items()}
    rep = evaluate(run, parse_qrels(sc.test_qrels.splitlines()))
    assert 0.5 < rep.mrr < 0.9


def test_rejects_empty():
    with pytest.raises(ValueError):
        make_synthetic_corpus(0, docs=0)
