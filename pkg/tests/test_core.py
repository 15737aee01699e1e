"""Core types, tokenization, vocabulary, and DF estimation."""

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfflops.core import (
    DocBatch,
    SparseVector,
    Vocabulary,
    avg_active_terms,
    build_vocab,
    estimate_df,
    load_vocab,
    read_corpus_jsonl,
    save_vocab,
    sparse_dot,
    tokenize,
    vectorize_counts,
    write_corpus_jsonl,
)
from dfflops.synth import SynthConfig, generate

from conftest import random_batch, random_sparse_vector


class TestTokenize:
    def test_splits_on_non_alphanumeric(self):
        assert tokenize("Disease burden, WHO.") == ["disease", "burden", "who"]

    def test_empty(self):
        assert tokenize("") == []

    def test_mixed_punctuation_and_digits(self):
        assert tokenize("DALYs (e.g. 2021)") == ["dalys", "e", "g", "2021"]


class TestBuildVocab:
    def test_min_df_cutoff(self):
        vocab = build_vocab([["a", "b"], ["b", "c"]], min_df=2)
        assert vocab.terms == ("b",)

    def test_single_doc(self):
        vocab = build_vocab([["a"]], min_df=1)
        assert vocab.terms == ("a",)

    def test_all_below_cutoff_is_error(self):
        with pytest.raises(ValueError, match="empty vocabulary"):
            build_vocab([["a"], ["b"]], min_df=2)

    def test_matches_bruteforce_doc_count_filter(self):
        # independent oracle: per-token document counts via Counter over sets
        data = generate(SynthConfig(num_docs=100, vocab_size=120,
                                    num_train_queries=0, num_eval_queries=0, seed=3))
        token_lists = [tokenize(text) for _, text in data.docs]
        counts = Counter(tok for toks in token_lists for tok in set(toks))
        expected = sorted(t for t, c in counts.items() if c >= 2)
        vocab = build_vocab(token_lists, min_df=2)
        assert list(vocab.terms) == expected
        assert [vocab.id_of(t) for t in vocab.terms] == list(range(len(vocab)))

    def test_roundtrip_file(self, tmp_path):
        vocab = build_vocab([["b", "a"], ["a", "c"]], min_df=1)
        save_vocab(vocab, tmp_path / "v.txt")
        loaded = load_vocab(tmp_path / "v.txt")
        assert loaded.terms == vocab.terms
        assert loaded.digest() == vocab.digest()


class TestSparseVector:
    def test_rejects_unsorted_ids(self):
        with pytest.raises(ValueError):
            SparseVector([2, 1], [1.0, 1.0])

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError):
            SparseVector([1, 2], [1.0, 0.0])

    def test_weight_lookup(self):
        v = SparseVector([1, 3], [0.5, 2.0])
        assert v.weight(1) == 0.5
        assert v.weight(2) == 0.0
        assert v.weight(3) == 2.0

    def test_from_dict_drops_zeros(self):
        v = SparseVector.from_dict({3: 0.5, 1: 0.0})
        assert v.to_dict() == {3: 0.5}


class TestVectorizeCounts:
    def test_counts_and_oov(self):
        vocab = Vocabulary.from_terms(["a", "b"])
        v = vectorize_counts(["b", "b", "z"], vocab)
        assert v.to_dict() == {1: 2}

    def test_empty(self):
        vocab = Vocabulary.from_terms(["a"])
        assert len(vectorize_counts([], vocab)) == 0

    @given(st.lists(st.sampled_from("abcdef"), max_size=50))
    def test_matches_counter_oracle(self, tokens):
        vocab = Vocabulary.from_terms(list("abcd"))
        v = vectorize_counts(tokens, vocab)
        expected = Counter(t for t in tokens if t in "abcd")
        assert v.to_dict() == {vocab.id_of(t): float(c) for t, c in expected.items()}
        assert all(w > 0 for w in v.weights)  # never a zero-weight entry


class TestSparseDot:
    def test_partial_match(self):
        doc = SparseVector([1, 3], [0.5, 2.0])
        assert sparse_dot({1, 2}, doc) == 0.5

    def test_empty_query(self):
        doc = SparseVector([1], [1.0])
        assert sparse_dot(set(), doc) == 0.0

    @given(st.data())
    @settings(max_examples=100)
    def test_equals_dense_binary_inner_product(self, data):
        vocab_size = 30
        seed = data.draw(st.integers(0, 2**31))
        rng = np.random.default_rng(seed)
        doc = random_sparse_vector(rng, vocab_size)
        query = set(rng.choice(vocab_size, size=rng.integers(0, 10), replace=False).tolist())
        indicator = np.zeros(vocab_size)
        indicator[list(query)] = 1.0
        expected = float(indicator @ doc.densify(vocab_size))
        assert sparse_dot(query, doc) == pytest.approx(expected, rel=1e-12, abs=1e-15)


class TestEstimateDf:
    def test_threshold_counting(self):
        vecs = [SparseVector([1], [0.3]), SparseVector([1, 2], [0.9, 0.1])]
        df = estimate_df(vecs, epsilon=0.2, vocab_size=3)
        assert df.df.tolist() == [0, 2, 0]
        assert df.sample_size == 2

    def test_all_empty_vectors(self):
        vecs = [SparseVector([], []), SparseVector([], [])]
        df = estimate_df(vecs, vocab_size=4)
        assert df.df.tolist() == [0, 0, 0, 0]

    def test_empty_list_is_error(self):
        with pytest.raises(ValueError):
            estimate_df([])

    def test_matches_per_term_scan_oracle(self, rng):
        vocab_size = 40
        vecs = random_batch(rng, 1000, vocab_size, max_nnz=12)
        eps = 0.5
        df = estimate_df(vecs, epsilon=eps, vocab_size=vocab_size)
        for t in range(vocab_size):
            expected = sum(1 for v in vecs if v.weight(t) > eps)
            assert df.df[t] == expected

    def test_permutation_invariant(self, rng):
        vecs = random_batch(rng, 50, 20, max_nnz=8)
        df1 = estimate_df(vecs, epsilon=0.3, vocab_size=20)
        order = rng.permutation(len(vecs))
        df2 = estimate_df([vecs[i] for i in order], epsilon=0.3, vocab_size=20)
        assert np.array_equal(df1.df, df2.df)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**31))
    @settings(max_examples=50)
    def test_monotone_in_threshold(self, eps_a, eps_b, seed):
        lo, hi = sorted([eps_a, eps_b])
        rng = np.random.default_rng(seed)
        vecs = random_batch(rng, 20, 10, max_nnz=6)
        df_lo = estimate_df(vecs, epsilon=lo, vocab_size=10)
        df_hi = estimate_df(vecs, epsilon=hi, vocab_size=10)
        assert np.all(df_lo.df >= df_hi.df)

    def test_vocab_size_guard(self):
        with pytest.raises(ValueError, match="exceeds"):
            estimate_df([SparseVector([5], [1.0])], vocab_size=3)


class TestAvgActiveTerms:
    def test_mean_entry_count(self):
        vecs = [SparseVector([1], [1.0]), SparseVector([1, 2, 3], [1.0, 1.0, 1.0])]
        assert avg_active_terms(vecs) == 2.0

    def test_all_empty(self):
        assert avg_active_terms([SparseVector([], [])]) == 0.0

    def test_empty_list_is_error(self):
        with pytest.raises(ValueError):
            avg_active_terms([])


class TestDocBatch:
    def test_requires_vectors(self):
        with pytest.raises(ValueError):
            DocBatch.of([], vocab_size=4)

    def test_rejects_out_of_range_terms(self):
        with pytest.raises(ValueError):
            DocBatch.of([SparseVector([7], [1.0])], vocab_size=4)

    def test_to_dense(self):
        batch = DocBatch.of([SparseVector([1], [2.0]), SparseVector([0, 2], [1.0, 3.0])], 3)
        assert batch.to_dense().tolist() == [[0.0, 2.0, 0.0], [1.0, 0.0, 3.0]]


class TestCorpusJsonl:
    def test_roundtrip(self, tmp_path):
        docs = [("d1", "hello world"), ("d2", "foo, bar!")]
        path = tmp_path / "c.jsonl"
        write_corpus_jsonl(docs, path)
        assert read_corpus_jsonl(path) == docs

    def test_bad_line_reports_location(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "a", "text": "x"}\nnot json\n')
        with pytest.raises(ValueError, match=":2"):
            read_corpus_jsonl(path)
