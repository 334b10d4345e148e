import numpy as np
import pytest

from conftest import toy_config
from ckqti.collection import read_queries
from ckqti.index import ImpactIndex, IndexFormatError, exhaustive_score, precompute_impacts, retrieve_topk
from ckqti.pipeline import (build_index, load_collection, read_candidates, read_pairs,
                            untrained_checkpoint)
from ckqti.scorer import CKModel, UninitializedStatistics
from ckqti.text import tokenize


@pytest.fixture(scope="module")
def built(synth_dir):
    cfg = toy_config(model_dim=16, heads=2, conv_groups=2, kernels=6, pool_window=30, pool_stride=10)
    coll = load_collection(synth_dir / "corpus.tsv", cfg)
    queries = read_queries(synth_dir / "queries.train.tsv")
    ck = untrained_checkpoint(cfg, coll, queries, read_pairs(synth_dir / "train_pairs.tsv"),
                              read_candidates(synth_dir / "candidates.train.trec"))
    return coll, ck, ck.to_model(), build_index(ck, coll)


def test_one_posting_per_occurring_vocab_term(built):
    coll, _, _, index = built
    expected = {(coll.vocab.id(t), o) for o, tf in enumerate(coll.stats.term_freq) for t in tf if t in coll.vocab}
    got = [(t, int(d)) for t, pl in index.postings.items() for d in pl.docs]
    assert len(got) == len(set(got))
    assert set(got) == expected


def test_rare_terms_have_no_postings(built):
    coll, _, _, index = built
    rare = [t for t, df in coll.stats.doc_freq.items() if df < 2]
    assert rare
    assert all(t not in coll.vocab for t in rare)
    assert 0 not in index.postings and 1 not in index.postings


def test_postings_sorted_by_impact(built):
    for pl in built[3].postings.values():
        imp = pl.impacts.astype(np.float64)
        assert np.all(np.diff(imp) <= 0)
        ties = np.flatnonzero(np.diff(imp) == 0)
        assert np.all(pl.docs[ties] < pl.docs[ties + 1])


def test_impact_equals_fresh_single_term_score(built):
    coll, _, model, index = built
    builder = coll.builder(model.cfg)
    rng = np.random.default_rng(0)
    terms = rng.choice(sorted(index.postings), size=15, replace=False)
    for t in terms:
        pl = index.postings[int(t)]
        for j in rng.choice(len(pl), size=min(3, len(pl)), replace=False):
            d = int(pl.docs[j])
            fresh = model.score(builder.batch([[coll.vocab.terms[int(t)]]], [d])).data[0]
            assert abs(fresh - float(pl.impacts[j])) < 1e-5


def test_single_term_query_is_list_prefix(built):
    index = built[3]
    t = max(index.postings, key=lambda t: len(index.postings[t]))
    got = retrieve_topk([t], index, 5)
    pl = index.postings[t]
    assert [d for d, _ in got] == pl.docs[:5].tolist()
    np.testing.assert_allclose([s for _, s in got], pl.impacts[:5], rtol=0, atol=1e-7)


def test_large_k_returns_all_matches(built):
    coll, _, _, index = built
    ids = coll.vocab.encode(["t0x1", "t3x2"])
    matched = set()
    for t in ids:
        if t in index.postings:
            matched |= set(index.postings[t].docs.tolist())
    got = retrieve_topk(ids, index, 10_000)
    assert {d for d, _ in got} == matched


def test_no_vocabulary_terms_gives_empty(built):
    index = built[3]
    assert retrieve_topk([1, 1], index, 10) == []
    assert retrieve_topk([], index, 10) == []
    with pytest.raises(ValueError):
        retrieve_topk([2], index, 0)


def test_matches_exhaustive_oracle(built, synth_dir):
    coll, _, model, index = built
    builder = coll.builder(model.cfg)
    queries = read_queries(synth_dir / "queries.test.tsv")
    for qid in sorted(queries)[:20]:
        terms = tokenize(queries[qid])
        full = exhaustive_score(terms, model, builder)
        for k in (1, 10, 100):
            got = retrieve_topk(coll.vocab.encode(terms), index, k)
            want = full[:k]
            assert [d for d, _ in got] == [d for d, _ in want]
            np.testing.assert_allclose([s for _, s in got], [s for _, s in want], atol=1e-5, rtol=0)
            present = {o for o, tf in enumerate(coll.stats.term_freq) if any(t in tf for t in terms)}
            assert {d for d, _ in got} <= present


def test_exhaustive_deterministic_and_order_free(built):
    coll, _, model, _ = built
    builder = coll.builder(model.cfg)
    a = exhaustive_score(["t1x3", "t1x5"], model, builder, batch_size=64)
    b = exhaustive_score(["t1x3", "t1x5"], model, builder, batch_size=7)
    assert [d for d, _ in a] == [d for d, _ in b]
    np.testing.assert_allclose([s for _, s in a], [s for _, s in b], atol=1e-12)
    assert a == exhaustive_score(["t1x3", "t1x5"], model, builder, batch_size=64)


def test_roundtrip_bit_exact(built, tmp_path):
    _, ck, _, index = built
    blob = index.to_bytes()
    assert blob.startswith(b"CKIDX1")
    index.save(tmp_path / "i.bin")
    again = ImpactIndex.load(tmp_path / "i.bin", checkpoint_hash=ck.hash())
    assert again.to_bytes() == blob
    ids = list(index.postings)[:3]
    assert retrieve_topk(ids, again, 20) == retrieve_topk(ids, index, 20)


def test_truncated_file_is_rejected(built):
    blob = built[3].to_bytes()
    for cut in (3, 20, len(blob) // 2, len(blob) - 1):
        with pytest.raises(IndexFormatError):
            ImpactIndex.from_bytes(blob[:cut])
    with pytest.raises(IndexFormatError, match="trailing"):
        ImpactIndex.from_bytes(blob + b"\0")


def test_wrong_hashes_refused(built):
    coll, ck, _, index = built
    blob = index.to_bytes()
    with pytest.raises(IndexFormatError, match="checkpoint"):
        ImpactIndex.from_bytes(blob, checkpoint_hash=b"\0" * 32)
    with pytest.raises(IndexFormatError, match="vocabulary"):
        ImpactIndex.from_bytes(blob, vocab_hash=b"\0" * 32)
    ImpactIndex.from_bytes(blob, checkpoint_hash=ck.hash(), vocab_hash=coll.vocab.hash())


def test_precompute_requires_frozen_stats(built):
    coll, ck, _, _ = built
    fresh = CKModel.init(ck.config, len(coll.vocab))
    with pytest.raises(UninitializedStatistics):
        precompute_impacts(fresh, coll.builder(ck.config), ck.hash())
