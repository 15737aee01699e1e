"""Quality metrics, TREC formats, and the latency benchmark protocol."""

import math

import numpy as np
import pytest

from dfflops.core import SparseVector, Vocabulary, build_vocab, tokenize, vectorize_counts
from dfflops.eval import (
    bench_latency,
    format_run_lines,
    mrr_at_k,
    ndcg_at_k,
    percentile_nearest_rank,
    read_qrels,
    read_run,
    recall_at_k,
    write_qrels,
)
from dfflops.index import build_index, match_count


def _random_run_and_qrels(rng, n_queries=20, n_docs=30, k_ranked=15):
    run, qrels = {}, {}
    doc_ids = [f"d{i}" for i in range(n_docs)]
    for q in range(n_queries):
        qid = f"q{q}"
        ranked = rng.permutation(doc_ids)[:k_ranked].tolist()
        run[qid] = ranked
        judged = rng.choice(doc_ids, size=rng.integers(1, 6), replace=False)
        qrels[qid] = {d: int(rng.integers(0, 4)) for d in judged}
    return run, qrels


class TestMrr:
    def test_relevant_at_rank_three(self):
        run = {"q": ["a", "b", "c", "d"]}
        qrels = {"q": {"c": 1}}
        assert mrr_at_k(run, qrels, 10) == pytest.approx(1 / 3)

    def test_relevant_below_cutoff(self):
        run = {"q": [f"d{i}" for i in range(11)]}
        qrels = {"q": {"d10": 1}}
        assert mrr_at_k(run, qrels, 10) == 0.0

    def test_matches_naive_scan_oracle(self, rng):
        run, qrels = _random_run_and_qrels(rng)
        k = 10
        per_query = []
        for qid, ranking in run.items():
            rr = 0.0
            for rank, doc in enumerate(ranking[:k], start=1):
                if qrels[qid].get(doc, 0) > 0:
                    rr = 1.0 / rank
                    break
            per_query.append(rr)
        assert mrr_at_k(run, qrels, k) == pytest.approx(float(np.mean(per_query)))

    def test_nondecreasing_in_k(self, rng):
        run, qrels = _random_run_and_qrels(rng)
        values = [mrr_at_k(run, qrels, k) for k in range(1, 16)]
        assert all(b >= a for a, b in zip(values, values[1:]))


class TestRecall:
    def test_all_relevant_found(self):
        run = {"q": ["a", "b"]}
        qrels = {"q": {"a": 1, "b": 2}}
        assert recall_at_k(run, qrels, 10) == 1.0

    def test_none_found(self):
        run = {"q": ["x", "y"]}
        qrels = {"q": {"a": 1}}
        assert recall_at_k(run, qrels, 10) == 0.0

    def test_matches_naive_oracle(self, rng):
        run, qrels = _random_run_and_qrels(rng)
        k = 8
        vals = []
        for qid, ranking in run.items():
            rel = {d for d, g in qrels[qid].items() if g > 0}
            if rel:
                vals.append(len(rel & set(ranking[:k])) / len(rel))
        assert recall_at_k(run, qrels, k) == pytest.approx(float(np.mean(vals)))

    def test_nondecreasing_in_k(self, rng):
        run, qrels = _random_run_and_qrels(rng)
        values = [recall_at_k(run, qrels, k) for k in range(1, 16)]
        assert all(b >= a for a, b in zip(values, values[1:]))


def _reference_ndcg(run, qrels, k):
    """Independent nDCG: explicit gain/discount tables, no shared code path."""
    scores = []
    for qid, ranking in run.items():
        judged = qrels.get(qid, {})
        gains = [2 ** judged.get(doc, 0) - 1 for doc in ranking[:k]]
        dcg = sum(g / math.log2(i + 2) for i, g in enumerate(gains))
        best = sorted((g for g in judged.values() if g > 0), reverse=True)[:k]
        idcg = sum((2**g - 1) / math.log2(i + 2) for i, g in enumerate(best))
        if idcg > 0:
            scores.append(dcg / idcg)
    return float(np.mean(scores)) if scores else 0.0


class TestNdcg:
    def test_perfect_ranking(self):
        run = {"q": ["a", "b", "c"]}
        qrels = {"q": {"a": 3, "b": 2, "c": 1}}
        assert ndcg_at_k(run, qrels, 10) == pytest.approx(1.0)

    def test_binary_single_relevant_at_rank_one(self):
        run = {"q": ["a", "b"]}
        qrels = {"q": {"a": 1}}
        assert ndcg_at_k(run, qrels, 1) == pytest.approx(1.0)

    def test_zero_ideal_queries_excluded(self):
        run = {"q1": ["a"], "q2": ["b"]}
        qrels = {"q1": {"a": 0}, "q2": {"b": 2}}
        assert ndcg_at_k(run, qrels, 5) == pytest.approx(1.0)

    def test_matches_reference_implementation(self, rng):
        for _ in range(10):
            run, qrels = _random_run_and_qrels(rng)
            k = int(rng.integers(1, 12))
            assert ndcg_at_k(run, qrels, k) == pytest.approx(_reference_ndcg(run, qrels, k))


class TestMetricInvariances:
    def test_doc_renaming_and_query_order(self, rng):
        run, qrels = _random_run_and_qrels(rng)
        rename = lambda d: f"renamed::{d}"
        run2 = {q: [rename(d) for d in rank] for q, rank in reversed(list(run.items()))}
        qrels2 = {q: {rename(d): g for d, g in j.items()} for q, j in qrels.items()}
        for metric, k in [(mrr_at_k, 10), (recall_at_k, 8), (ndcg_at_k, 10)]:
            assert metric(run, qrels, k) == pytest.approx(metric(run2, qrels2, k))

    def test_unjudged_queries_excluded(self):
        run = {"q1": ["a"], "q2": ["b"]}
        qrels = {"q1": {"a": 1}}
        assert mrr_at_k(run, qrels, 10) == 1.0
        assert recall_at_k(run, qrels, 10) == 1.0


class TestTrecFiles:
    def test_qrels_roundtrip(self, tmp_path):
        qrels = {"q1": {"d1": 2, "d2": 0}, "q2": {"d3": 1}}
        path = tmp_path / "qrels.txt"
        write_qrels(qrels, path)
        assert read_qrels(path) == qrels

    def test_qrels_bad_line(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 0 d1\n")
        with pytest.raises(ValueError, match="4"):
            read_qrels(path)

    def test_run_lines_and_parse(self, tmp_path):
        lines = format_run_lines("q7", [("docB", 2.5), ("docA", 1.25)], tag="t")
        assert lines == ["q7 Q0 docB 1 2.500000 t", "q7 Q0 docA 2 1.250000 t"]
        path = tmp_path / "run.trec"
        path.write_text("\n".join(lines) + "\n")
        assert read_run(path) == {"q7": ["docB", "docA"]}


class TestPercentile:
    def test_nearest_rank(self):
        values = list(range(1, 101))
        assert percentile_nearest_rank(values, 99.0) == 99
        assert percentile_nearest_rank(values, 50.0) == 50
        assert percentile_nearest_rank([7.0], 99.0) == 7.0


def _tiny_search_setup():
    texts = {
        "d1": "apple banana apple",
        "d2": "banana cherry",
        "d3": "cherry cherry date",
    }
    vocab = build_vocab([tokenize(t) for t in texts.values()], min_df=1)
    docs = [vectorize_counts(tokenize(t), vocab, d) for d, t in texts.items()]
    return build_index(docs, vocab_size=len(vocab)), vocab


class TestBenchLatency:
    def test_matches_avg_is_exact_and_repeatable(self):
        index, vocab = _tiny_search_setup()
        queries = [("q1", "banana"), ("q2", "cherry date"), ("q3", "nothing here")]
        r1 = bench_latency(index, queries, vocab, repeats=1)
        r2 = bench_latency(index, queries, vocab, repeats=1)
        assert r1.matches_avg == r2.matches_avg
        expected = np.mean([
            match_count(index, {vocab.id_of("banana")}),
            match_count(index, {vocab.id_of("cherry"), vocab.id_of("date")}),
            0,
        ])
        assert r1.matches_avg == pytest.approx(float(expected))

    def test_single_doc_index(self):
        vocab = Vocabulary.from_terms(["only"])
        index = build_index([SparseVector([0], [1.0], "d")], vocab_size=1)
        report = bench_latency(index, [("q", "only"), ("q2", "only missing")], vocab, repeats=1)
        assert report.matches_avg <= 1.0
        assert report.avg_emb_length == 1.0

    def test_top1_df_and_lengths_reported(self):
        index, vocab = _tiny_search_setup()
        report = bench_latency(index, [("q", "banana")], vocab, repeats=2)
        # banana and cherry both appear in 2 of 3 docs
        assert report.top1_df_pct == pytest.approx(100.0 * 2 / 3)
        assert report.avg_emb_length == pytest.approx(np.mean([2, 2, 2]))
        assert report.latency_p99_ms >= 0.0
        assert report.repeats == 2

    def test_empty_query_set_is_error(self):
        index, vocab = _tiny_search_setup()
        with pytest.raises(ValueError):
            bench_latency(index, [], vocab)

    def test_json_is_parseable(self):
        import json

        index, vocab = _tiny_search_setup()
        report = bench_latency(index, [("q", "banana")], vocab, repeats=1)
        payload = json.loads(report.to_json())
        assert payload["query_count"] == 1
        assert "latency_avg_ms" in payload
        assert "Top@1" in report.table() or "Top" in report.table()
